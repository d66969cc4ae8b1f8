//! The `softcal` command line: corpus generation, pretraining, calibration,
//! evaluation and single-note summarization.
//!
//! Exit codes: 0 success, 2 input or usage error, 3 numeric failure during
//! training, 4 checkpoint digest mismatch.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::calib::summarize::{Calibration, SummarizeOptions};
use crate::calib::{load_calibrator, save_calibrator, train_calibrator, SoftPromptToken};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::harness::{
    compare_runs, emit_report, soft_length_ablation, token_comparison, EvaluationRun, Experiment, Pipeline,
    PromptEnsemble, SummaryModel, VarianceReport,
};
use crate::lm::corpus::{read_jsonl, write_jsonl};
use crate::lm::synthetic::generate_corpus;
use crate::lm::{load_model, pretrain, save_model, FrozenLm};
pub use config::PipelineConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_DIGEST: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Training { .. } => EXIT_NUMERIC,
        Error::DigestMismatch { .. } => EXIT_DIGEST,
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "softcal", version, about = "Soft-prompt calibration of a frozen summarizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic findings/impression corpus as JSONL.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the summarizer on the train corpus and write a frozen checkpoint.
    Pretrain(Common),
    /// Train the soft prompt encoder against the frozen model.
    Calibrate(Common),
    /// Score the prompt ensemble with and/or without calibration.
    Evaluate(EvaluateArgs),
    /// Summarize one note.
    Summarize(SummarizeArgs),
}

/// Config file plus overrides. Flags win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_corpus: Option<PathBuf>,
    #[arg(long)]
    pub eval_corpus: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub calibrator: Option<PathBuf>,
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
    /// csv or markdown
    #[arg(long)]
    pub report_format: Option<String>,
}

impl Common {
    pub fn load(&self) -> Result<PipelineConfig> {
        let mut overrides = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::contract(format!("--set expects KEY=VALUE, got {s:?}")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        let typed = [
            ("seed", self.seed.map(|s| s.to_string())),
            ("train_corpus", path(&self.train_corpus)),
            ("eval_corpus", path(&self.eval_corpus)),
            ("prompts", path(&self.prompts)),
            ("model", path(&self.model)),
            ("calibrator", path(&self.calibrator)),
            ("report_dir", path(&self.report_dir)),
            ("report_format", self.report_format.clone()),
        ];
        overrides.extend(typed.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        PipelineConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Calibrated arm only.
    #[arg(long, conflicts_with_all = ["without_spec", "both"])]
    pub with_spec: bool,
    /// Uncalibrated arm only.
    #[arg(long, conflicts_with = "both")]
    pub without_spec: bool,
    /// Both arms plus the variance report (the default).
    #[arg(long)]
    pub both: bool,
    /// Soft token lengths for the length ablation, e.g. 2,4,6.
    #[arg(long, value_delimiter = ',')]
    pub soft_lengths: Vec<usize>,
    /// In-distribution soft token for the token comparison.
    #[arg(long)]
    pub soft_token: Option<String>,
    /// Out-of-distribution soft token for the token comparison.
    #[arg(long)]
    pub ood_token: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Note text, or a path to a file holding it.
    #[arg(long)]
    pub input: String,
    #[arg(long, default_value = "")]
    pub prompt: String,
    #[arg(long)]
    pub with_spec: bool,
    /// Also write the summary to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command, writing
/// normal output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("softcal: error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenCorpus { out: path, size, seed } => cmd_gen_corpus(path, *size, *seed),
        Command::Pretrain(c) => cmd_pretrain(&c.load()?, out),
        Command::Calibrate(c) => cmd_calibrate(&c.load()?, out),
        Command::Evaluate(a) => cmd_evaluate(&a.common.load()?, a, out),
        Command::Summarize(a) => cmd_summarize(&a.common.load()?, a, out),
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::io(d, e)),
        _ => Ok(()),
    }
}

pub fn cmd_gen_corpus(path: &Path, size: usize, seed: u64) -> Result<()> {
    ensure_parent(path)?;
    write_jsonl(path, &generate_corpus(size, seed))
}

pub fn cmd_pretrain(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    config::require_file(&cfg.train_corpus, "train corpus")?;
    let corpus = read_jsonl(&cfg.train_corpus)?;
    let mut log = Vec::new();
    let (lm, _) = pretrain(&corpus, &cfg.pretrain_config(), |e, l| log.push((e, l)))?;
    for (e, l) in log {
        say(out, format_args!("epoch={e} loss={l:.8}"))?;
    }
    ensure_parent(&cfg.model)?;
    save_model(&lm, &cfg.model)?;
    say(out, format_args!("model={} digest={}", cfg.model.display(), lm.compute_digest()))
}

fn load_frozen(cfg: &PipelineConfig) -> Result<FrozenLm> {
    config::require_file(&cfg.model, "model checkpoint")?;
    load_model(&cfg.model)
}

fn load_prompts(cfg: &PipelineConfig) -> Result<PromptEnsemble> {
    match &cfg.prompts {
        Some(p) => {
            config::require_file(p, "prompt file")?;
            PromptEnsemble::read(p)
        }
        None => Ok(PromptEnsemble::bundled()),
    }
}

fn load_stored(cfg: &PipelineConfig, lm: &FrozenLm) -> Result<Calibration> {
    config::require_file(&cfg.calibrator, "calibrator checkpoint")?;
    Ok(load_calibrator(&cfg.calibrator, lm)?.calibration)
}

pub fn cmd_calibrate(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let lm = load_frozen(cfg)?;
    config::require_file(&cfg.train_corpus, "train corpus")?;
    let notes = read_jsonl(&cfg.train_corpus)?;
    let ensemble = load_prompts(cfg)?;
    let inputs: Vec<_> = notes.iter().map(|r| lm.tokenize(&r.findings)).collect();
    let prompts: Vec<_> = ensemble.prompts.iter().map(|p| lm.tokenize(p)).collect();
    let token = SoftPromptToken::new(&cfg.soft_token, &lm)?;
    let mut log = Vec::new();
    let (encoder, report) = train_calibrator(&inputs, &prompts, &token, &lm, &cfg.calibration, |e, l| log.push((e, l)))?;
    for (e, l) in log {
        say(out, format_args!("epoch={e} loss={l:.8}"))?;
    }
    let cal = Calibration { encoder, token };
    ensure_parent(&cfg.calibrator)?;
    save_calibrator(&cfg.calibrator, &cal, &cfg.calibration, &lm)?;
    let soft = lm.vocab().detokenize(&cal.soft_prompt(&lm)?)?;
    say(out, format_args!("converged={} soft-prompt: {soft}", report.converged))
}

fn write_report(cfg: &PipelineConfig, stem: &str, reports: &[VarianceReport], out: &mut dyn Write) -> Result<()> {
    let path = cfg.report_dir.join(format!("{stem}.{}", cfg.report_format.extension()));
    fsutil::write_atomic(&path, &emit_report(reports, cfg.report_format))?;
    say(out, format_args!("wrote {}", path.display()))
}

/// `arm,prompt_index,rouge1,rouge2,rougeL` per prompt.
pub fn per_prompt_csv(runs: &[&EvaluationRun]) -> String {
    let mut s = String::from("arm,prompt_index,rouge1,rouge2,rougeL\n");
    for run in runs {
        for (i, [r1, r2, rl]) in run.per_prompt_scores.iter().enumerate() {
            s.push_str(&format!("{},{i},{r1:.6},{r2:.6},{rl:.6}\n", run.label));
        }
    }
    s
}

pub fn cmd_evaluate(cfg: &PipelineConfig, args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let lm = load_frozen(cfg)?;
    config::require_file(&cfg.eval_corpus, "eval corpus")?;
    let eval = read_jsonl(&cfg.eval_corpus)?;
    let ensemble = load_prompts(cfg)?;
    let ablating = !args.soft_lengths.is_empty() || args.soft_token.is_some() || args.ood_token.is_some();
    let train = if ablating {
        config::require_file(&cfg.train_corpus, "train corpus")?;
        read_jsonl(&cfg.train_corpus)?
    } else {
        Vec::new()
    };
    let run_baseline = !args.with_spec;
    let run_spec = !args.without_spec;
    // Check the stored calibrator before spending time on evaluation.
    let stored = if run_spec { Some(load_stored(cfg, &lm)?) } else { None };

    let mut exp = Experiment::new(&lm, &train, &eval, &ensemble, cfg.calibration.clone());
    exp.opts = SummarizeOptions {
        max_len: cfg.summary_len,
        separator: cfg.calibration.separator_policy,
    };
    std::fs::create_dir_all(&cfg.report_dir).map_err(|e| Error::io(&cfg.report_dir, e))?;

    let baseline = if run_baseline || ablating { Some(exp.baseline_run()?) } else { None };
    let spec = stored.as_ref().map(|c| exp.spec_run(c)).transpose()?;
    let mut runs = Vec::new();
    if run_baseline {
        runs.extend(baseline.as_ref());
    }
    runs.extend(spec.as_ref());
    fsutil::write_atomic(&cfg.report_dir.join("per_prompt.csv"), per_prompt_csv(&runs).as_bytes())?;
    if let (true, Some(b), Some(s)) = (run_baseline, &baseline, &spec) {
        write_report(cfg, "variance", &[compare_runs(b, s, "default")?], out)?;
    }

    if let Some(b) = &baseline {
        if !args.soft_lengths.is_empty() {
            let base = SoftPromptToken::new(&cfg.soft_token, &lm)?;
            let reports: Vec<_> = soft_length_ablation(&exp, &base, &args.soft_lengths, b)?
                .into_iter()
                .map(|(_, r)| r)
                .collect();
            write_report(cfg, "soft_lengths", &reports, out)?;
        }
        if args.soft_token.is_some() || args.ood_token.is_some() {
            let in_tok = SoftPromptToken::new(args.soft_token.as_deref().unwrap_or(&cfg.soft_token), &lm)?;
            let ood_tok = SoftPromptToken::new(args.ood_token.as_deref().unwrap_or(&cfg.ood_token), &lm)?;
            write_report(cfg, "token_comparison", &token_comparison(&exp, &in_tok, &ood_tok, b)?, out)?;
        }
    }
    Ok(())
}

pub fn cmd_summarize(cfg: &PipelineConfig, args: &SummarizeArgs, out: &mut dyn Write) -> Result<()> {
    let as_path = Path::new(&args.input);
    let note = if as_path.is_file() {
        fsutil::read_to_string(as_path)?
    } else {
        args.input.clone()
    };
    let note = note.trim();
    if note.is_empty() {
        return Err(Error::contract("input note is empty"));
    }
    let lm = load_frozen(cfg)?;
    let opts = SummarizeOptions {
        max_len: cfg.summary_len,
        separator: cfg.calibration.separator_policy,
    };
    let pipeline = if args.with_spec {
        let cal = load_stored(cfg, &lm)?;
        let p = Pipeline::calibrated(&lm, &cal, opts)?;
        let soft = p.soft_prompt().expect("calibrated pipeline has a soft prompt");
        say(out, format_args!("soft-prompt: {}", lm.vocab().detokenize(soft)?))?;
        p
    } else {
        Pipeline::baseline(&lm, opts)
    };
    let summary = pipeline.summarize_text(note, &args.prompt)?;
    say(out, format_args!("{summary}"))?;
    if let Some(path) = &args.out {
        fsutil::write_atomic(path, format!("{summary}\n").as_bytes())?;
    }
    Ok(())
}
