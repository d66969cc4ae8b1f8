//! ROUGE-1, ROUGE-2 and ROUGE-L with clipped n-gram counts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    R1,
    R2,
    RL,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::R1, Variant::R2, Variant::RL];

    pub fn label(self) -> &'static str {
        match self {
            Variant::R1 => "ROUGE-1",
            Variant::R2 => "ROUGE-2",
            Variant::RL => "ROUGE-L",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub variant: Variant,
}

impl RougeScore {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize, variant: Variant) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(overlap, cand_total);
        let recall = ratio(overlap, ref_total);
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
            variant,
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Contiguous n-token windows with multiplicity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramMultiset<T: Ord> {
    pub n: usize,
    pub counts: BTreeMap<Vec<T>, usize>,
}

impl<T: Ord> NGramMultiset<T> {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Σ min(count_self, count_other) over shared n-grams.
    pub fn clipped_overlap(&self, other: &Self) -> usize {
        self.counts
            .iter()
            .filter_map(|(g, &c)| other.counts.get(g).map(|&o| c.min(o)))
            .sum()
    }
}

pub fn ngrams<T: Ord + Clone>(tokens: &[T], n: usize) -> Result<NGramMultiset<T>> {
    if n == 0 {
        return Err(Error::contract("n-gram order must be at least 1"));
    }
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    Ok(NGramMultiset { n, counts })
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_n<T: Ord + Clone>(reference: &[T], candidate: &[T], n: usize) -> Result<RougeScore> {
    let r = ngrams(reference, n)?;
    let c = ngrams(candidate, n)?;
    // General n is supported; only n = 2 carries its own tag.
    let variant = if n == 2 { Variant::R2 } else { Variant::R1 };
    let score = RougeScore::from_counts(r.clipped_overlap(&c), c.total(), r.total(), variant);
    Ok(score)
}

pub fn rouge_l<T: PartialEq>(reference: &[T], candidate: &[T]) -> RougeScore {
    let l = lcs_length(reference, candidate);
    RougeScore::from_counts(l, candidate.len(), reference.len(), Variant::RL)
}

/// Lowercases and splits on whitespace and punctuation, dropping the punctuation.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeSuite {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

impl RougeSuite {
    pub fn get(&self, v: Variant) -> &RougeScore {
        match v {
            Variant::R1 => &self.r1,
            Variant::R2 => &self.r2,
            Variant::RL => &self.rl,
        }
    }

    pub fn f1s(&self) -> [f64; 3] {
        [self.r1.f1, self.r2.f1, self.rl.f1]
    }
}

pub fn rouge_suite(reference: &str, candidate: &str) -> RougeSuite {
    let r = metric_tokens(reference);
    let c = metric_tokens(candidate);
    RougeSuite {
        r1: rouge_n(&r, &c, 1).expect("n=1"),
        r2: rouge_n(&r, &c, 2).expect("n=2"),
        rl: rouge_l(&r, &c),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn ngram_examples() {
        let m = ngrams(&toks("a b a"), 1).unwrap();
        assert_eq!(m.counts.get(&toks("a")), Some(&2));
        assert_eq!(m.counts.get(&toks("b")), Some(&1));
        let m = ngrams(&toks("a b a"), 2).unwrap();
        assert_eq!(m.counts.len(), 2);
        assert_eq!(m.counts.get(&toks("a b")), Some(&1));
        assert_eq!(m.counts.get(&toks("b a")), Some(&1));
        assert!(ngrams(&toks("a"), 2).unwrap().counts.is_empty());
        assert!(ngrams(&toks("a"), 0).is_err());
    }

    #[test]
    fn lcs_examples() {
        let a = toks("police killed the gunman");
        let b = toks("police kill the gunman");
        assert_eq!(lcs_length(&a, &a), 4);
        assert_eq!(lcs_length(&a, &b), 3);
        assert_eq!(lcs_length(&a, &toks("x y")), 0);
        let l = rouge_l(&a, &b);
        assert_eq!((l.precision, l.recall, l.f1), (0.75, 0.75, 0.75));
    }

    #[test]
    fn rouge_n_examples() {
        let s = rouge_n(&toks("the cat sat"), &toks("the cat"), 1).unwrap();
        assert_eq!(s.precision, 1.0);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 0.8).abs() < 1e-15);
        let same = rouge_n(&toks("a b c"), &toks("a b c"), 2).unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let none = rouge_n(&toks("a b"), &toks("c d"), 1).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn suite_examples() {
        let s = rouge_suite("No acute process.", "no acute process");
        assert_eq!(s.f1s(), [1.0, 1.0, 1.0]);
        let z = rouge_suite("a b c", "");
        assert_eq!(z.f1s(), [0.0, 0.0, 0.0]);
        let e = rouge_l::<String>(&toks("a b"), &[]);
        assert_eq!(e.f1, 0.0);
    }

    fn seq() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..5, 0..12)
    }

    proptest! {
        #[test]
        fn swapping_arguments_swaps_p_and_r(a in seq(), b in seq()) {
            for (x, y) in [(rouge_n(&a, &b, 1).unwrap(), rouge_n(&b, &a, 1).unwrap()),
                           (rouge_n(&a, &b, 2).unwrap(), rouge_n(&b, &a, 2).unwrap()),
                           (rouge_l(&a, &b), rouge_l(&b, &a))] {
                prop_assert_eq!(x.precision, y.recall);
                prop_assert_eq!(x.recall, y.precision);
                prop_assert_eq!(x.f1, y.f1);
                for v in [x.precision, x.recall, x.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            prop_assert_eq!(lcs_length(&a, &b), lcs_length(&b, &a));
            prop_assert_eq!(lcs_length(&a, &a), a.len());
        }

        #[test]
        fn overlap_bounded(a in seq(), b in seq(), n in 1usize..4) {
            let (r, c) = (ngrams(&a, n).unwrap(), ngrams(&b, n).unwrap());
            prop_assert!(r.clipped_overlap(&c) <= r.total().min(c.total()));
        }

        #[test]
        fn novel_token_never_raises_r1_precision(a in seq(), b in seq()) {
            let before = rouge_n(&a, &b, 1).unwrap().precision;
            let mut longer = b.clone();
            longer.push(9);
            prop_assert!(rouge_n(&a, &longer, 1).unwrap().precision <= before);
        }
    }
}
