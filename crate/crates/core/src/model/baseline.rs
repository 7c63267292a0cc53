use serde::{Deserialize, Serialize};

use crate::gp::GaussianPrediction;
use crate::model::ModelError;

/// Predicts the training-target mean everywhere, with the training-target
/// variance as its predictive variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantBaseline {
    pub mean: f64,
    pub variance: f64,
}

impl ConstantBaseline {
    pub fn fit(targets: &[f64]) -> Result<Self, ModelError> {
        if targets.is_empty() || targets.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Invalid("constant baseline needs finite targets".into()));
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let variance = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, variance })
    }

    pub fn predict(&self, n: usize) -> Vec<GaussianPrediction> {
        vec![
            GaussianPrediction {
                mean: self.mean,
                latent_var: 0.0,
                noise_var: self.variance,
            };
            n
        ]
    }
}
