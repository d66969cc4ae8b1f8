#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softcal::diff::{Tape, Var};

// ----- ROUGE by brute force ------------------------------------------------

/// Every contiguous n-gram, listed directly.
pub fn grams(tokens: &[u8], n: usize) -> Vec<Vec<u8>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

/// Clipped overlap by repeatedly striking matched grams from a copy.
pub fn clipped_overlap(reference: &[Vec<u8>], candidate: &[Vec<u8>]) -> usize {
    let mut pool = reference.to_vec();
    let mut hits = 0;
    for g in candidate {
        if let Some(pos) = pool.iter().position(|p| p == g) {
            pool.swap_remove(pos);
            hits += 1;
        }
    }
    hits
}

/// Plain recursive LCS with memoisation on suffix indices.
pub fn lcs_recursive(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Full LCS table, quadratic space.
pub fn lcs_table(a: &[u8], b: &[u8]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

/// (precision, recall, f1) from raw counts; empty denominators give 0.
pub fn prf(overlap: usize, cand_total: usize, ref_total: usize) -> (f64, f64, f64) {
    let p = if cand_total == 0 { 0.0 } else { overlap as f64 / cand_total as f64 };
    let r = if ref_total == 0 { 0.0 } else { overlap as f64 / ref_total as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

pub fn oracle_rouge_n(reference: &[u8], candidate: &[u8], n: usize) -> (f64, f64, f64) {
    let (rg, cg) = (grams(reference, n), grams(candidate, n));
    prf(clipped_overlap(&rg, &cg), cg.len(), rg.len())
}

pub fn oracle_rouge_l(reference: &[u8], candidate: &[u8]) -> (f64, f64, f64) {
    let l = if reference.len() <= 10 && candidate.len() <= 10 {
        let r = lcs_recursive(reference, candidate);
        assert_eq!(r, lcs_table(reference, candidate));
        r
    } else {
        lcs_table(reference, candidate)
    };
    prf(l, candidate.len(), reference.len())
}

pub fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize, vocab: u8) -> Vec<u8> {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| rng.gen_range(0..vocab)).collect()
}

// ----- finite differences --------------------------------------------------

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let dn = f(&xp);
            xp[i] = orig;
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Relative error 1e-4, or absolute 1e-8 where the true gradient is below 1e-6.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    if numeric.abs() < 1e-6 {
        (analytic - numeric).abs() <= 1e-8
    } else {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()) <= 1e-4
    }
}

pub type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Fixed pseudo-random weights reduce any tensor to a scalar.
pub fn weighted_sum(t: &mut Tape, v: Var) -> Var {
    let n = t.value(v).len();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.913 + 0.3).sin()).collect();
    let shape = t.shape(v).to_vec();
    let wv = t.constant(shape, w).unwrap();
    let prod = t.mul(v, wv).unwrap();
    let flat = t.reshape(prod, vec![1, n]).unwrap();
    let ones = t.constant(vec![n, 1], vec![1.0; n]).unwrap();
    let s = t.matmul(flat, ones).unwrap();
    t.reshape(s, vec![1]).unwrap()
}

fn eval(shapes: &[Vec<usize>], data: &[Vec<f64>], build: &Build, grad: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = shapes
        .iter()
        .zip(data)
        .map(|(s, d)| tape.input(s.clone(), d.clone(), grad).unwrap())
        .collect();
    let out = build(&mut tape, &vars);
    let loss = tape.scalar(out);
    if !grad {
        return (loss, Vec::new());
    }
    tape.backward(out).unwrap();
    let grads = vars
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(v).len()]))
        .collect();
    (loss, grads)
}

/// Runs `instances` random finite-difference checks; returns the number of
/// instances with any component out of tolerance and the worst relative error.
pub fn fd_check(seed: u64, instances: usize, shapes: &[Vec<usize>], scale: f64, build: &Build) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let data: Vec<Vec<f64>> = shapes.iter().map(|s| rand_vec(&mut rng, s.iter().product(), scale)).collect();
        let (_, grads) = eval(shapes, &data, build, true);
        let mut bad = false;
        for k in 0..shapes.len() {
            let f = |x: &[f64]| {
                let mut d = data.clone();
                d[k] = x.to_vec();
                eval(shapes, &d, build, false).0
            };
            for (&a, &n) in grads[k].iter().zip(&fd_grad(&f, &data[k], 1e-5)) {
                if !grad_close(a, n) {
                    bad = true;
                }
                if n.abs() >= 1e-6 {
                    worst = worst.max((a - n).abs() / a.abs().max(n.abs()));
                }
            }
        }
        failures += bad as usize;
    }
    (failures, worst)
}

// ----- pipeline fixtures ---------------------------------------------------

pub const PRETRAIN_EPOCHS: usize = 40;

/// Runs the CLI in-process; panics with its output on a non-zero exit.
pub fn cli(args: &[&str]) -> String {
    let mut out = Vec::new();
    let mut argv = vec!["softcal"];
    argv.extend_from_slice(args);
    let code = softcal::cli::run(argv, &mut out);
    let text = String::from_utf8(out).unwrap();
    assert_eq!(code, 0, "softcal {args:?} failed:\n{text}");
    text
}

pub fn cli_code(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut argv = vec!["softcal"];
    argv.extend_from_slice(args);
    let code = softcal::cli::run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

/// Paths of one CLI pipeline working directory.
pub struct Workspace {
    pub root: PathBuf,
    pub config: PathBuf,
}

impl Workspace {
    /// Writes the corpora and a config file under `root`.
    pub fn prepare(root: &Path, seed: u64, extra_config: &str) -> Self {
        let train = root.join("train.jsonl");
        let test = root.join("test.jsonl");
        let s = seed.to_string();
        let t = (seed + 1).to_string();
        cli(&["gen-corpus", "--out", train.to_str().unwrap(), "--size", "200", "--seed", &s]);
        cli(&["gen-corpus", "--out", test.to_str().unwrap(), "--size", "50", "--seed", &t]);
        let config = root.join("run.conf");
        let text = format!(
            "seed = {seed}\ntrain_corpus = {}\neval_corpus = {}\nmodel = {}\ncalibrator = {}\nreport_dir = {}\npretrain_epochs = {PRETRAIN_EPOCHS}\n{extra_config}",
            train.display(),
            test.display(),
            root.join("model.sclm").display(),
            root.join("calibrator.scsp").display(),
            root.join("reports").display(),
        );
        std::fs::write(&config, text).unwrap();
        Workspace {
            root: root.to_path_buf(),
            config,
        }
    }

    pub fn conf(&self) -> &str {
        self.config.to_str().unwrap()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// `epoch=<n> loss=<x>` lines of a training log.
pub fn logged_losses(log: &str) -> Vec<f64> {
    log.lines()
        .filter_map(|l| l.strip_prefix("epoch="))
        .map(|l| l.split_once(" loss=").unwrap().1.parse().unwrap())
        .collect()
}
