use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean: f64,
    /// Sample standard deviation (divisor n − 1).
    pub std: f64,
    /// Set when only one value was given, so `std` is a placeholder 0.
    pub single_value: bool,
}

pub fn ensemble_stats(values: &[f64]) -> Result<EnsembleStats> {
    if values.is_empty() {
        return Err(Error::contract("ensemble_stats needs at least one value"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok(EnsembleStats {
            mean,
            std: 0.0,
            single_value: true,
        });
    }
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok(EnsembleStats {
        mean,
        std: (ss / (n - 1.0)).sqrt(),
        single_value: false,
    })
}

/// Percentage by which `spec_std` undercuts `baseline_std`; negative when it grew.
pub fn std_deduction(baseline_std: f64, spec_std: f64) -> Result<f64> {
    if !(baseline_std > 0.0) {
        return Err(Error::contract(format!(
            "std deduction is undefined for baseline std {baseline_std}"
        )));
    }
    if spec_std < 0.0 {
        return Err(Error::contract("standard deviations cannot be negative"));
    }
    Ok((baseline_std - spec_std) / baseline_std * 100.0)
}

/// Percentage drop of the mean score; negative when calibration improved it.
pub fn mean_deduction(baseline_mean: f64, spec_mean: f64) -> Result<f64> {
    if baseline_mean == 0.0 {
        return Err(Error::contract("mean deduction is undefined for a zero baseline mean"));
    }
    Ok((baseline_mean - spec_mean) / baseline_mean * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_examples() {
        let s = ensemble_stats(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!((s.mean, s.std), (0.5, 0.0));
        let s = ensemble_stats(&[0.52, 0.53]).unwrap();
        assert!((s.mean - 0.525).abs() < 1e-15);
        assert!((s.std - 0.01 / 2f64.sqrt()).abs() < 1e-12);
        let one = ensemble_stats(&[0.3]).unwrap();
        assert!(one.single_value && one.std == 0.0);
        assert!(ensemble_stats(&[]).is_err());
    }

    #[test]
    fn deduction_examples() {
        assert!((std_deduction(0.0081, 0.0050).unwrap() - 38.27).abs() < 0.01);
        assert!((std_deduction(0.0079, 0.0045).unwrap() - 43.04).abs() < 0.01);
        assert_eq!(std_deduction(0.2, 0.2).unwrap(), 0.0);
        assert!(std_deduction(0.1, 0.3).unwrap() < 0.0);
        assert!(std_deduction(0.0, 0.1).is_err());
    }
}
