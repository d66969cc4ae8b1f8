use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::soft::{Distance, SeparatorPolicy, SoftPromptEncoder, SoftPromptToken};
use crate::diff::{OptimizerState, Tape};
use crate::error::{Error, Result};
use crate::lm::pretrain::Plateau;
use crate::lm::vocab::TokenSequence;
use crate::lm::FrozenLm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub distance: Distance,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub convergence_tol: f64,
    /// Consecutive low-improvement epochs before stopping.
    pub patience: usize,
    pub seed: u64,
    pub separator_policy: SeparatorPolicy,
    /// (input, prompt) pairs per optimizer step; `None` steps once per epoch
    /// on the mean loss over every pair.
    pub batch_size: Option<usize>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            distance: Distance::Mse,
            learning_rate: 1e-3,
            max_epochs: 200,
            convergence_tol: 1e-4,
            patience: 10,
            seed: 0,
            separator_policy: SeparatorPolicy::PromptFirst,
            batch_size: None,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning_rate must be positive"));
        }
        if self.max_epochs == 0 || self.batch_size == Some(0) {
            return Err(Error::contract("max_epochs and batch_size must be positive"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::contract("convergence_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub epoch_losses: Vec<f64>,
    pub converged: bool,
}

/// Zero-shot: only notes and prompts are consumed, never reference summaries.
///
/// The frozen embeddings of every note and every prompted note are computed
/// once; each step then only re-runs the soft encoder on the soft token.
pub fn train_calibrator(
    inputs: &[TokenSequence],
    prompts: &[TokenSequence],
    tok: &SoftPromptToken,
    lm: &FrozenLm,
    config: &CalibrationConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(SoftPromptEncoder, CalibrationReport)> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::contract("calibration needs at least one input note"));
    }
    if prompts.is_empty() {
        return Err(Error::contract("calibration needs at least one prompt"));
    }
    if !lm.is_frozen() {
        return Err(Error::contract("calibration requires a frozen model"));
    }
    if let Some(i) = inputs.iter().position(|s| s.is_empty()) {
        return Err(Error::contract(format!("input note {i} is empty")));
    }
    let digest_before = lm.compute_digest();
    let max_len = lm.config().max_seq_len;

    let e_org: Vec<Vec<f64>> = inputs.iter().map(|t| lm.pooled(&t.ids)).collect::<Result<_>>()?;
    let mut e_pr: Vec<Vec<f64>> = Vec::with_capacity(inputs.len() * prompts.len());
    for t in inputs {
        for p in prompts {
            e_pr.push(lm.pooled(&config.separator_policy.join(&p.ids, &t.ids, max_len))?);
        }
    }
    let d = lm.d_model();

    let mut enc = SoftPromptEncoder::from_frozen(lm);
    let mut opt = OptimizerState::adam(config.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut plateau = Plateau::new(config.patience, config.convergence_tol);
    let mut report = CalibrationReport {
        epoch_losses: Vec::new(),
        converged: false,
    };
    let mut order: Vec<usize> = (0..e_pr.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let step = config.batch_size.unwrap_or(order.len()).max(1);
        for batch in order.chunks(step) {
            let grads = {
                let mut tape = Tape::new();
                let (h, leaves) = enc.encode_on(&mut tape, tok)?;
                let mut losses = Vec::with_capacity(batch.len());
                for &pair in batch {
                    let org = tape.constant(vec![d], e_org[pair / prompts.len()].clone())?;
                    let pr = tape.constant(vec![d], e_pr[pair].clone())?;
                    let prompted = tape.mean_pair(pr, h)?;
                    let loss = config.distance.apply(&mut tape, org, prompted)?;
                    let value = tape.scalar(loss);
                    if !value.is_finite() {
                        return Err(Error::Training {
                            epoch,
                            pair: Some(pair),
                            loss: value,
                        });
                    }
                    total += value;
                    losses.push(loss);
                }
                let loss = tape.mean(&losses)?;
                tape.backward(loss)?;
                leaves.iter().map(|&v| tape.take_grad(v)).collect::<Vec<_>>()
            };
            let mut params = enc.params.tensors_mut();
            for (p, g) in params.iter_mut().zip(grads) {
                if let Some(g) = g {
                    p.accumulate_grad(&g)?;
                }
            }
            opt.step(&mut params)?;
        }
        let mean = total / order.len() as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
        if plateau.observe(mean) {
            report.converged = true;
            break;
        }
    }
    enc.trained = true;
    if lm.compute_digest() != digest_before {
        return Err(Error::contract("frozen model changed during calibration"));
    }
    Ok((enc, report))
}
