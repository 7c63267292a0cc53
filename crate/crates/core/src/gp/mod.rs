//! Gaussian-process regression: the squared-exponential kernel, an exact GP
//! used as a reference, and the sparse variational GP trained through the
//! evidence lower bound.

mod exact;
mod fit;
mod kernel;
mod svgp;

pub use exact::ExactGp;
pub use fit::{fit_svgp, SvgpFitConfig, SvgpFitReport};
pub use kernel::{kernel_matrix, kernel_on_tape, SeKernel};
pub use svgp::{
    elbo, jittered_cholesky, predict_on_tape, svgp_predict, ElboTerms, SvgpState, SvgpVars, NOISE_FLOOR,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::TensorError;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid GP input: {0}")]
    Invalid(String),
}

/// Predictive Gaussian for one query, in target units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction<T = f64> {
    pub mean: T,
    /// Variance of the latent function value.
    pub latent_var: T,
    /// Observation noise variance added for observation-level intervals.
    pub noise_var: T,
}

impl<T: Scalar> GaussianPrediction<T> {
    /// Latent variance plus observation noise.
    pub fn obs_var(&self) -> T {
        self.latent_var + self.noise_var
    }

    pub fn variance(&self, include_noise: bool) -> T {
        if include_noise {
            self.obs_var()
        } else {
            self.latent_var
        }
    }

    pub fn obs_std(&self) -> T {
        self.obs_var().sqrt()
    }
}

/// Smallest latent variance reported by predictions; round-off can push the
/// computed value to or below zero far inside the data.
pub(crate) const MIN_VARIANCE: f64 = 1e-12;
