use super::soft::{encode_soft, SeparatorPolicy, SoftPromptEncoder, SoftPromptToken};
use crate::error::{Error, Result};
use crate::lm::model::nearest_row;
use crate::lm::vocab::TokenSequence;
use crate::lm::FrozenLm;

/// Maximum generated summary length used by default.
pub const DEFAULT_SUMMARY_LEN: usize = 40;

/// Turns `h_soft` into `k` vocabulary ids. Slot `i` takes the token nearest to
/// `h_soft` minus the mean of the rows already chosen.
pub fn decode_soft_prompt(
    enc: &SoftPromptEncoder,
    tok: &SoftPromptToken,
    lm: &FrozenLm,
    k: usize,
) -> Result<TokenSequence> {
    if !lm.is_frozen() {
        return Err(Error::contract("decode_soft_prompt requires a frozen model"));
    }
    if k == 0 {
        return Err(Error::contract("soft prompt decode length must be at least 1"));
    }
    let h = encode_soft(tok, enc)?;
    let d = lm.d_model();
    let table = lm.encoder().embed.data();
    let mut sum = vec![0.0; d];
    let mut ids = Vec::with_capacity(k);
    for i in 0..k {
        let target: Vec<f64> = if i == 0 {
            h.clone()
        } else {
            h.iter().zip(&sum).map(|(x, s)| x - s / i as f64).collect()
        };
        let id = nearest_row(table, d, &target)?;
        for (s, x) in sum.iter_mut().zip(&table[id * d..(id + 1) * d]) {
            *s += x;
        }
        ids.push(id);
    }
    Ok(TokenSequence::new(ids))
}

/// A trained encoder together with the token it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub encoder: SoftPromptEncoder,
    pub token: SoftPromptToken,
}

impl Calibration {
    /// Decoded soft prompt of the token's own length.
    pub fn soft_prompt(&self, lm: &FrozenLm) -> Result<TokenSequence> {
        decode_soft_prompt(&self.encoder, &self.token, lm, self.token.length)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SummarizeOptions {
    pub max_len: usize,
    pub separator: SeparatorPolicy,
}

impl Default for SummarizeOptions {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_SUMMARY_LEN,
            separator: SeparatorPolicy::PromptFirst,
        }
    }
}

/// Encoder input for one summary: `[soft ⊕] prompt ⊕ SEP ⊕ note`.
pub fn summary_input(t_org: &[usize], t_llm: &[usize], soft: Option<&[usize]>, lm: &FrozenLm, sep: SeparatorPolicy) -> Vec<usize> {
    let max_len = lm.config().max_seq_len;
    let joined = sep.join(t_llm, t_org, max_len);
    match soft {
        None => joined,
        Some(s) => {
            let mut ids = s.to_vec();
            ids.extend(joined);
            ids.truncate(max_len);
            ids
        }
    }
}

/// Summarizes with an already-decoded soft prompt (or none for the baseline).
pub fn summarize_with_soft_ids(
    t_org: &TokenSequence,
    t_llm: &TokenSequence,
    lm: &FrozenLm,
    soft: Option<&[usize]>,
    opts: &SummarizeOptions,
) -> Result<TokenSequence> {
    if t_org.is_empty() {
        return Err(Error::contract("cannot summarize an empty note"));
    }
    let input = summary_input(&t_org.ids, &t_llm.ids, soft, lm, opts.separator);
    let context = lm.pooled(&input)?;
    lm.decode_greedy(&context, opts.max_len)
}

pub fn summarize(
    t_org: &TokenSequence,
    t_llm: &TokenSequence,
    lm: &FrozenLm,
    calibration: Option<&Calibration>,
    opts: &SummarizeOptions,
) -> Result<TokenSequence> {
    let soft = calibration.map(|c| c.soft_prompt(lm)).transpose()?;
    summarize_with_soft_ids(t_org, t_llm, lm, soft.as_ref().map(|s| s.ids.as_slice()), opts)
}
