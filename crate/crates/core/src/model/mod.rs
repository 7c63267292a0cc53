//! Deep-kernel models: an extractor feeding either a sparse GP head or a
//! linear maximum-likelihood head, their training loop, checkpoint files and
//! a constant-mean reference predictor.

mod baseline;
mod dkl;
mod train;

pub use baseline::ConstantBaseline;
pub use dkl::{DklModel, ModelFile};
pub use train::{train_dkl, LogEntry, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::TensorError;
use crate::cluster::ClusterError;
use crate::extractors::ExtractorError;
use crate::gp::GpError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Gp,
    Mle,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Gp => "gp",
            Head::Mle => "mle",
        }
    }
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Extractor(#[from] ExtractorError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Parameters of the best epoch seen before the failure.
        last_good: Box<TrainOutcome>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file {path}: {message}")]
    Format { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl ModelError {
    /// Whether the error stems from non-finite or ill-conditioned values.
    pub fn is_numerical(&self) -> bool {
        match self {
            ModelError::Tensor(e) | ModelError::Extractor(ExtractorError::Tensor(e)) | ModelError::Gp(GpError::Tensor(e)) => {
                e.is_numerical()
            }
            ModelError::Cluster(ClusterError::NonFinite) | ModelError::Diverged { .. } => true,
            _ => false,
        }
    }
}
