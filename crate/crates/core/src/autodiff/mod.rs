//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] is rebuilt for every optimization step: parameters are
//! registered as leaves, the loss is computed through [`Var`] operations, and
//! [`Tape::backward`] returns gradients keyed by parameter name.

mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{Adam, AdamConfig, AdamState};
pub use params::{BoundParams, Checkpoint, EncodedTensor, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::pairwise_sq_dist;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    BadAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("range {start}..{end} out of bounds for length {len}")]
    BadRange { start: usize, end: usize, len: usize },
    #[error("{op}: no operands")]
    Empty { op: &'static str },
    #[error("matrix is not positive definite (leading minor {minor})")]
    NotPositiveDefinite { minor: usize },
    #[error("triangular matrix is singular at diagonal index {index}")]
    SingularTriangular { index: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("operation {op} has no backward rule")]
    NoBackwardRule { op: &'static str },
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("parameter {name} is missing")]
    MissingParam { name: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl TensorError {
    /// Failures caused by the values involved rather than by shapes or names.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::NotPositiveDefinite { .. }
                | Self::SingularTriangular { .. }
                | Self::NonFinite { .. }
                | Self::NonFiniteGradient { .. }
        )
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
