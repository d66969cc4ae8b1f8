use super::eval::{evaluate_ensemble, EvaluationRun, Pipeline, BASELINE_LABEL, SPEC_LABEL};
use super::prompts::PromptEnsemble;
use super::report::{compare_runs, VarianceReport};
use crate::calib::summarize::{Calibration, SummarizeOptions};
use crate::calib::{train_calibrator, CalibrationConfig, CalibrationReport, SoftPromptToken};
use crate::error::{Error, Result};
use crate::lm::vocab::TokenSequence;
use crate::lm::{CorpusRecord, FrozenLm};

/// Everything a calibrate-then-evaluate run needs besides the soft token.
pub struct Experiment<'a> {
    pub lm: &'a FrozenLm,
    /// Notes the calibrator trains on (no impressions involved).
    pub calibration_inputs: Vec<TokenSequence>,
    pub eval_corpus: &'a [CorpusRecord],
    pub ensemble: &'a PromptEnsemble,
    pub config: CalibrationConfig,
    pub opts: SummarizeOptions,
    pub config_digest: String,
}

impl<'a> Experiment<'a> {
    pub fn new(
        lm: &'a FrozenLm,
        calibration_notes: &[CorpusRecord],
        eval_corpus: &'a [CorpusRecord],
        ensemble: &'a PromptEnsemble,
        config: CalibrationConfig,
    ) -> Self {
        let opts = SummarizeOptions {
            separator: config.separator_policy,
            ..Default::default()
        };
        let config_digest = format!("{config:?}");
        Self {
            lm,
            calibration_inputs: calibration_notes.iter().map(|r| lm.tokenize(&r.findings)).collect(),
            eval_corpus,
            ensemble,
            config,
            opts,
            config_digest,
        }
    }

    fn prompt_ids(&self) -> Vec<TokenSequence> {
        self.ensemble.prompts.iter().map(|p| self.lm.tokenize(p)).collect()
    }

    pub fn baseline_run(&self) -> Result<EvaluationRun> {
        let model = Pipeline::baseline(self.lm, self.opts);
        evaluate_ensemble(&model, self.ensemble, self.eval_corpus, BASELINE_LABEL, self.config.seed, &self.config_digest)
    }

    pub fn calibrate(
        &self,
        token: &SoftPromptToken,
        on_epoch: impl FnMut(usize, f64),
    ) -> Result<(Calibration, CalibrationReport)> {
        let (encoder, report) =
            train_calibrator(&self.calibration_inputs, &self.prompt_ids(), token, self.lm, &self.config, on_epoch)?;
        Ok((
            Calibration {
                encoder,
                token: token.clone(),
            },
            report,
        ))
    }

    pub fn spec_run(&self, calibration: &Calibration) -> Result<EvaluationRun> {
        let model = Pipeline::calibrated(self.lm, calibration, self.opts)?;
        evaluate_ensemble(&model, self.ensemble, self.eval_corpus, SPEC_LABEL, self.config.seed, &self.config_digest)
    }

    /// Calibrates on `token`, evaluates, and compares against `baseline`.
    pub fn run_case(&self, token: &SoftPromptToken, case: &str, baseline: &EvaluationRun) -> Result<VarianceReport> {
        let (cal, _) = self.calibrate(token, |_, _| {})?;
        compare_runs(baseline, &self.spec_run(&cal)?, case)
    }
}

/// One report per requested soft-token length, each from a fresh calibrator
/// trained on the truncated token with the same seed.
pub fn soft_length_ablation(
    exp: &Experiment<'_>,
    base_token: &SoftPromptToken,
    lengths: &[usize],
    baseline: &EvaluationRun,
) -> Result<Vec<(usize, VarianceReport)>> {
    if lengths.is_empty() {
        return Err(Error::contract("no soft token lengths given"));
    }
    let tokens = lengths
        .iter()
        .map(|&n| base_token.truncated(n, exp.lm))
        .collect::<Result<Vec<_>>>()?;
    lengths
        .iter()
        .zip(&tokens)
        .map(|(&n, tok)| Ok((n, exp.run_case(tok, &format!("soft-{n}"), baseline)?)))
        .collect()
}

/// In-distribution versus out-of-distribution soft token, one report each.
pub fn token_comparison(
    exp: &Experiment<'_>,
    in_token: &SoftPromptToken,
    ood_token: &SoftPromptToken,
    baseline: &EvaluationRun,
) -> Result<Vec<VarianceReport>> {
    Ok(vec![
        exp.run_case(in_token, "in-distribution", baseline)?,
        exp.run_case(ood_token, "out-of-distribution", baseline)?,
    ])
}
