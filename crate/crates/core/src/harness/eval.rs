use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompts::{hex, PromptEnsemble};
use crate::calib::summarize::{summarize_with_soft_ids, Calibration, SummarizeOptions};
use crate::error::{Error, Result};
use crate::lm::vocab::TokenSequence;
use crate::lm::{CorpusRecord, FrozenLm};
use crate::rouge::rouge_suite;

pub const BASELINE_LABEL: &str = "w/ LLM prompts";
pub const SPEC_LABEL: &str = "w/ SPeC";

/// Anything that turns (findings, prompt) into summary text.
pub trait SummaryModel {
    fn summarize_text(&self, findings: &str, prompt: &str) -> Result<String>;
}

/// The frozen model, optionally with a calibration whose soft prompt has been
/// decoded once up front.
pub struct Pipeline<'a> {
    lm: &'a FrozenLm,
    soft: Option<TokenSequence>,
    opts: SummarizeOptions,
}

impl<'a> Pipeline<'a> {
    pub fn baseline(lm: &'a FrozenLm, opts: SummarizeOptions) -> Self {
        Self { lm, soft: None, opts }
    }

    pub fn calibrated(lm: &'a FrozenLm, calibration: &Calibration, opts: SummarizeOptions) -> Result<Self> {
        Ok(Self {
            lm,
            soft: Some(calibration.soft_prompt(lm)?),
            opts,
        })
    }

    pub fn soft_prompt(&self) -> Option<&TokenSequence> {
        self.soft.as_ref()
    }

    pub fn summarize_ids(&self, t_org: &TokenSequence, t_llm: &TokenSequence) -> Result<TokenSequence> {
        summarize_with_soft_ids(t_org, t_llm, self.lm, self.soft.as_ref().map(|s| s.ids.as_slice()), &self.opts)
    }
}

impl SummaryModel for Pipeline<'_> {
    fn summarize_text(&self, findings: &str, prompt: &str) -> Result<String> {
        let out = self.summarize_ids(&self.lm.tokenize(findings), &self.lm.tokenize(prompt))?;
        self.lm.vocab().detokenize(&out)
    }
}

/// Corpus-mean F1 for (R1, R2, RL) under one prompt.
pub fn evaluate_prompt(model: &dyn SummaryModel, prompt: &str, corpus: &[CorpusRecord]) -> Result<[f64; 3]> {
    if corpus.is_empty() {
        return Err(Error::contract("evaluation corpus is empty"));
    }
    let mut sums = [0.0; 3];
    for r in corpus {
        if !r.has_impression() {
            return Err(Error::contract(format!("record {} has no impression", r.id)));
        }
        let summary = model.summarize_text(&r.findings, prompt)?;
        for (s, f) in sums.iter_mut().zip(rouge_suite(&r.impression, &summary).f1s()) {
            *s += f;
        }
    }
    Ok(sums.map(|s| s / corpus.len() as f64))
}

/// Hex SHA-256 over ids, findings and impressions.
pub fn corpus_digest(corpus: &[CorpusRecord]) -> String {
    let mut h = Sha256::new();
    for r in corpus {
        for field in [&r.id, &r.findings, &r.impression] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field.as_bytes());
        }
    }
    hex(&h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub label: String,
    pub prompts: Vec<String>,
    /// `[R1, R2, RL]` corpus-mean F1 per prompt, in ensemble order.
    pub per_prompt_scores: Vec<[f64; 3]>,
    pub seed: u64,
    pub config_digest: String,
    pub corpus_digest: String,
    pub ensemble_digest: String,
}

pub fn evaluate_ensemble(
    model: &dyn SummaryModel,
    ensemble: &PromptEnsemble,
    corpus: &[CorpusRecord],
    label: &str,
    seed: u64,
    config_digest: &str,
) -> Result<EvaluationRun> {
    let per_prompt_scores = ensemble
        .prompts
        .iter()
        .map(|p| evaluate_prompt(model, p, corpus))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationRun {
        label: label.to_string(),
        prompts: ensemble.prompts.clone(),
        per_prompt_scores,
        seed,
        config_digest: config_digest.to_string(),
        corpus_digest: corpus_digest(corpus),
        ensemble_digest: ensemble.digest(),
    })
}
