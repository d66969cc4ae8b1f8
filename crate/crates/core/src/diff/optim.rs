use serde::{Deserialize, Serialize};

use super::DiffValue;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum UpdateRule {
    /// θ ← θ − lr·g
    Plain,
    /// Bias-corrected adaptive moments.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl UpdateRule {
    pub const ADAM_DEFAULT: UpdateRule = UpdateRule::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub learning_rate: f64,
    rule: UpdateRule,
    step_count: u64,
    /// (first, second) moment per parameter; `None` under the plain rule.
    moments: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl OptimizerState {
    pub fn new(rule: UpdateRule, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::contract(format!("learning rate must be positive, got {learning_rate}")));
        }
        let moments = match rule {
            UpdateRule::Plain => None,
            UpdateRule::Adam { .. } => Some(Vec::new()),
        };
        Ok(Self {
            learning_rate,
            rule,
            step_count: 0,
            moments,
        })
    }

    pub fn plain(learning_rate: f64) -> Result<Self> {
        Self::new(UpdateRule::Plain, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(UpdateRule::ADAM_DEFAULT, learning_rate)
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn has_moments(&self) -> bool {
        self.moments.is_some()
    }

    /// Applies one update to `params` from their accumulated gradients,
    /// then zeroes the gradients.
    ///
    /// The parameter list must be presented in the same order, with the same
    /// shapes, on every call.
    pub fn step(&mut self, params: &mut [&mut DiffValue]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| !p.requires_grad()) {
            return Err(Error::contract(format!(
                "optimizer step on a parameter of shape {:?} that does not require grad",
                p.shape()
            )));
        }
        self.step_count += 1;
        let lr = self.learning_rate;
        match (self.rule, &mut self.moments) {
            (UpdateRule::Plain, _) => {
                for p in params.iter_mut() {
                    let g = p.grad().to_vec();
                    for (x, gv) in p.data_mut().iter_mut().zip(&g) {
                        *x -= lr * gv;
                    }
                }
            }
            (UpdateRule::Adam { beta1, beta2, eps }, Some(moments)) => {
                if moments.is_empty() {
                    *moments = params
                        .iter()
                        .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
                        .collect();
                }
                if moments.len() != params.len() || moments.iter().zip(params.iter()).any(|(m, p)| m.0.len() != p.numel()) {
                    return Err(Error::contract("optimizer parameter set changed between steps"));
                }
                let t = self.step_count as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (p, (m, v)) in params.iter_mut().zip(moments.iter_mut()) {
                    let g = p.grad().to_vec();
                    for (((x, gv), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gv;
                        *vi = beta2 * *vi + (1.0 - beta2) * gv * gv;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *x -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            (UpdateRule::Adam { .. }, None) => unreachable!("adaptive rule always carries moments"),
        }
        for p in params.iter_mut() {
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(x: f64) -> DiffValue {
        DiffValue::param(vec![1], vec![x]).unwrap()
    }

    #[test]
    fn plain_step_hand_arithmetic() {
        let mut theta = scalar_param(1.0);
        theta.accumulate_grad(&[2.0]).unwrap();
        let mut opt = OptimizerState::plain(0.1).unwrap();
        opt.step(&mut [&mut theta]).unwrap();
        assert!((theta.data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(theta.grad(), &[0.0]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut theta = scalar_param(0.37);
        let mut opt = OptimizerState::plain(0.1).unwrap();
        opt.step(&mut [&mut theta]).unwrap();
        assert_eq!(theta.data()[0], 0.37);
    }

    #[test]
    fn plain_rule_geometric_decay_on_square() {
        // f(θ) = θ², g = 2θ, θ ← 0.8θ; oracle 0.8^100 ≈ 2.04e-10
        let oracle = 0.8f64.powi(100);
        let mut theta = scalar_param(1.0);
        let mut opt = OptimizerState::plain(0.1).unwrap();
        for _ in 0..100 {
            let g = 2.0 * theta.data()[0];
            theta.accumulate_grad(&[g]).unwrap();
            opt.step(&mut [&mut theta]).unwrap();
        }
        assert!(theta.data()[0].abs() < 1e-9);
        assert!((theta.data()[0] - oracle).abs() < 1e-20);
        assert_eq!(opt.step_count(), 100);
    }

    #[test]
    fn moments_exist_only_for_adaptive_rule() {
        assert!(!OptimizerState::plain(0.1).unwrap().has_moments());
        assert!(OptimizerState::adam(0.1).unwrap().has_moments());
        assert!(OptimizerState::plain(0.0).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut theta = scalar_param(1.0);
        theta.accumulate_grad(&[5.0]).unwrap();
        let mut opt = OptimizerState::adam(1e-3).unwrap();
        opt.step(&mut [&mut theta]).unwrap();
        // bias-corrected first step is lr·sign(g) up to eps
        assert!((theta.data()[0] - (1.0 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn frozen_parameter_is_rejected() {
        let mut c = DiffValue::constant(vec![1], vec![1.0]).unwrap();
        let mut opt = OptimizerState::plain(0.1).unwrap();
        assert!(opt.step(&mut [&mut c]).is_err());
    }
}
