use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::evaluation::EvalError;
use crate::gp::GaussianPrediction;

/// Half-width of the clinical-accuracy band, in logMAR.
pub const CLINICAL_TOLERANCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mse: f64,
    pub mae: f64,
    /// Absent when the targets have zero variance.
    pub r2: Option<f64>,
    /// Percentage of predictions within the clinical tolerance, inclusive.
    pub clinical_accuracy: f64,
}

fn check_lengths(preds: usize, targets: usize) -> Result<(), EvalError> {
    if preds != targets || preds == 0 {
        return Err(EvalError::Invalid(format!("{preds} predictions for {targets} targets")));
    }
    Ok(())
}

pub fn point_metrics(preds: &[f64], targets: &[f64]) -> Result<PointMetrics, EvalError> {
    check_lengths(preds.len(), targets.len())?;
    if preds.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(EvalError::Invalid("non-finite prediction or target".into()));
    }
    let n = targets.len() as f64;
    let mut sse = 0.0;
    let mut sae = 0.0;
    let mut within = 0usize;
    for (p, y) in preds.iter().zip(targets) {
        let e = p - y;
        sse += e * e;
        sae += e.abs();
        if e.abs() <= CLINICAL_TOLERANCE {
            within += 1;
        }
    }
    let mean = targets.iter().sum::<f64>() / n;
    let sst: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    Ok(PointMetrics {
        mse: sse / n,
        mae: sae / n,
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
        clinical_accuracy: 100.0 * within as f64 / n,
    })
}

/// CRPS of `N(mean, sd²)` against the outcome `y`.
pub fn crps_normal(mean: f64, sd: f64, y: f64) -> Result<f64, EvalError> {
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(EvalError::Invalid(format!("CRPS needs a positive standard deviation, got {sd}")));
    }
    let std = Normal::standard();
    let z = (y - mean) / sd;
    Ok(sd * (z * (2.0 * std.cdf(z) - 1.0) + 2.0 * std.pdf(z) - 1.0 / std::f64::consts::PI.sqrt()))
}

/// CRPS of the observation-level predictive distribution.
pub fn crps_gaussian(pred: &GaussianPrediction, y: f64) -> Result<f64, EvalError> {
    crps_normal(pred.mean, pred.obs_std(), y)
}

/// Percentage of targets inside the central `level` interval of each
/// observation-level predictive Gaussian.
pub fn interval_coverage(preds: &[GaussianPrediction], targets: &[f64], level: f64) -> Result<f64, EvalError> {
    check_lengths(preds.len(), targets.len())?;
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::Invalid(format!("coverage level must lie in (0, 1), got {level}")));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let inside = preds
        .iter()
        .zip(targets)
        .filter(|(p, &y)| (y - p.mean).abs() <= z * p.obs_std())
        .count();
    Ok(100.0 * inside as f64 / targets.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    pub clinical_accuracy: f64,
    pub crps: f64,
    pub coverage95: f64,
    pub n_samples: usize,
}

pub fn metric_report(preds: &[GaussianPrediction], targets: &[f64]) -> Result<MetricReport, EvalError> {
    let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    let point = point_metrics(&means, targets)?;
    let crps = preds
        .iter()
        .zip(targets)
        .map(|(p, &y)| crps_gaussian(p, y))
        .sum::<Result<f64, _>>()?
        / targets.len() as f64;
    Ok(MetricReport {
        mse: point.mse,
        mae: point.mae,
        r2: point.r2,
        clinical_accuracy: point.clinical_accuracy,
        crps,
        coverage95: interval_coverage(preds, targets, 0.95)?,
        n_samples: targets.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_predictions_are_perfect() {
        let y = [0.1, 0.4, 0.9];
        let m = point_metrics(&y, &y).unwrap();
        assert_eq!((m.mse, m.mae, m.r2, m.clinical_accuracy), (0.0, 0.0, Some(1.0), 100.0));
    }

    #[test]
    fn accuracy_counts_the_band() {
        let m = point_metrics(&[0.0, 0.5], &[0.05, 0.7]).unwrap();
        assert_eq!(m.clinical_accuracy, 50.0);
    }

    #[test]
    fn constant_mean_has_zero_r2_and_constant_targets_have_none() {
        let y = [1.0, 2.0, 3.0, 6.0];
        assert_eq!(point_metrics(&[3.0; 4], &y).unwrap().r2, Some(0.0));
        assert_eq!(point_metrics(&[1.0, 2.0], &[2.0, 2.0]).unwrap().r2, None);
    }

    #[test]
    fn crps_scales_with_sd_and_vanishes_at_a_point_mass() {
        let a = crps_normal(0.0, 1.0, 0.7).unwrap();
        let b = crps_normal(0.0, 3.0, 2.1).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
        assert!(crps_normal(0.2, 1e-12, 0.2).unwrap() < 1e-11);
        assert!(crps_normal(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn coverage_edge_cases() {
        let p = |mean, var| GaussianPrediction {
            mean,
            latent_var: 0.0,
            noise_var: var,
        };
        assert_eq!(interval_coverage(&[p(1.0, 1.0), p(2.0, 0.5)], &[1.0, 2.0], 0.95).unwrap(), 100.0);
        assert_eq!(interval_coverage(&[p(1.0, 0.0), p(2.0, 0.0)], &[1.5, 2.5], 0.95).unwrap(), 0.0);
    }
}
