//! Sequence feature extractors: map a prefix `x₁:t` of encoded records to a
//! latent vector `h = dec(enc(x₁:t)) ∈ R^m`.
//!
//! Parameters live in a [`ParamStore`] under `fe.*` names. Every forward pass
//! is recorded on a tape, so the same code serves training (trainable
//! leaves, dropout on) and inference (constants, dropout off).

mod cyclical;
mod init;
mod mle;
mod network;

pub use cyclical::{
    calendar_indices, cyclical_encode, cyclical_from_indices, cyclical_pair, parse_timestamp, DAY_PERIOD,
    MONTH_PERIOD, YEAR_PERIOD,
};
pub use mle::{mle_head, mle_head_on_tape, mle_params, MLE_BIAS, MLE_WEIGHT};
pub use network::{encode_batch, encode_on_tape, encode_prefix, Dropout};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamStore, TensorError};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractorError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid extractor configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("unparseable timestamp {0:?}")]
    Timestamp(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Rnn,
    Gru,
    Lstm,
    Transformer,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Rnn, Arch::Gru, Arch::Lstm, Arch::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Rnn => "rnn",
            Arch::Gru => "gru",
            Arch::Lstm => "lstm",
            Arch::Transformer => "transformer",
        }
    }

    /// Gate blocks per recurrent layer.
    pub(crate) fn gates(self) -> usize {
        match self {
            Arch::Rnn => 1,
            Arch::Gru => 3,
            Arch::Lstm => 4,
            Arch::Transformer => 0,
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub arch: Arch,
    pub input_dim: usize,
    /// Hidden size of recurrent layers, or the transformer model dimension.
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Attention heads (transformer only).
    #[serde(default)]
    pub num_heads: usize,
    /// Feed-forward width (transformer only).
    #[serde(default)]
    pub feedforward_dim: usize,
    pub decoder_dim: usize,
    pub latent_dim: usize,
    pub dropout: f64,
}

/// Per-architecture optimum of the hyperparameter grid, together with the
/// GP settings chosen alongside it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchDefaults {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub decoder_dim: usize,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub num_inducing: usize,
    pub batch_size: usize,
}

impl ArchDefaults {
    pub fn of(arch: Arch) -> Self {
        let recurrent = |num_layers, latent_dim, learning_rate| ArchDefaults {
            hidden_dim: 512,
            num_layers,
            num_heads: 0,
            feedforward_dim: 0,
            decoder_dim: 128,
            latent_dim,
            learning_rate,
            num_inducing: 128,
            batch_size: 32,
        };
        match arch {
            Arch::Rnn => recurrent(3, 2, 5e-5),
            Arch::Gru => recurrent(3, 4, 2e-4),
            Arch::Lstm => recurrent(4, 3, 5e-5),
            Arch::Transformer => ArchDefaults {
                hidden_dim: 512,
                num_layers: 6,
                num_heads: 32,
                feedforward_dim: 2048,
                decoder_dim: 256,
                latent_dim: 2,
                learning_rate: 1e-4,
                num_inducing: 128,
                batch_size: 32,
            },
        }
    }
}

pub const DEFAULT_DROPOUT: f64 = 0.1;

impl ExtractorConfig {
    /// Grid optimum for `arch` on inputs of width `input_dim`.
    pub fn defaults(arch: Arch, input_dim: usize) -> Self {
        let d = ArchDefaults::of(arch);
        Self {
            arch,
            input_dim,
            hidden_dim: d.hidden_dim,
            num_layers: d.num_layers,
            num_heads: d.num_heads,
            feedforward_dim: d.feedforward_dim,
            decoder_dim: d.decoder_dim,
            latent_dim: d.latent_dim,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn validate(&self) -> Result<(), ExtractorError> {
        let positive = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("decoder_dim", self.decoder_dim),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ExtractorError::Config(format!("{name} must be positive")));
            }
        }
        if self.latent_dim > self.decoder_dim {
            return Err(ExtractorError::Config(format!(
                "latent_dim ({}) must not exceed decoder_dim ({})",
                self.latent_dim, self.decoder_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ExtractorError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.arch == Arch::Transformer {
            if self.num_heads == 0 || self.feedforward_dim == 0 {
                return Err(ExtractorError::Config(
                    "num_heads and feedforward_dim must be positive for the transformer".into(),
                ));
            }
            if self.hidden_dim % self.num_heads != 0 {
                return Err(ExtractorError::Config(format!(
                    "hidden_dim ({}) must be divisible by num_heads ({})",
                    self.hidden_dim, self.num_heads
                )));
            }
        }
        Ok(())
    }

    /// Width of the sequence representation handed to the decoder.
    pub fn encoder_dim(&self) -> usize {
        self.hidden_dim
    }
}

/// Latent representation of one prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVector<T = f64> {
    pub values: Vec<T>,
    pub patient_id: String,
    pub prefix_length: usize,
}

/// Freshly initialized extractor parameters.
pub fn init_params<T: Scalar>(config: &ExtractorConfig, rng: &mut Rng) -> Result<ParamStore<T>, ExtractorError> {
    config.validate()?;
    Ok(init::init_params(config, rng))
}

pub(crate) fn check_sequence<T: Scalar>(config: &ExtractorConfig, seq: &crate::autodiff::Tensor<T>) -> Result<(), ExtractorError> {
    if seq.rank() != 2 || seq.cols() != config.input_dim {
        return Err(ExtractorError::Input(format!(
            "sequence of shape {:?} does not have {} features per record",
            seq.shape(),
            config.input_dim
        )));
    }
    if seq.rows() == 0 {
        return Err(ExtractorError::Input("empty prefix (t = 0)".into()));
    }
    if !seq.is_finite() {
        return Err(ExtractorError::Input("non-finite feature value".into()));
    }
    Ok(())
}
