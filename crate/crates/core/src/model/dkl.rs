use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, ParamStore, Tensor};
use crate::cluster::PatientOutputs;
use crate::data::{sample_tensor, PatientSequence, PrefixSample};
use crate::extractors::{encode_batch, mle_head, ExtractorConfig};
use crate::gp::{svgp_predict, GaussianPrediction, SvgpState};
use crate::model::{Head, ModelError};

/// Prefixes encoded per parallel work item.
const ENCODE_CHUNK: usize = 64;

/// A trained extractor together with its regression head.
#[derive(Clone, Debug, PartialEq)]
pub struct DklModel {
    pub extractor: ExtractorConfig,
    pub head: Head,
    /// Most recent records kept per prefix.
    pub max_prefix: usize,
    /// All trainable parameters: `fe.*` plus `gp.*` or `mle.*`.
    pub params: ParamStore<f64>,
    /// Predictive variance of the linear head (its training MSE).
    pub mle_variance: Option<f64>,
}

/// On-disk form of a [`DklModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub extractor: ExtractorConfig,
    pub head: Head,
    pub max_prefix: usize,
    pub mle_variance: Option<f64>,
    pub params: Checkpoint,
}

impl ModelFile {
    pub const FORMAT: &'static str = "trajgp-model-v1";
}

impl DklModel {
    pub fn latent_dim(&self) -> usize {
        self.extractor.latent_dim
    }

    /// Sparse GP head in constrained units (GP models only).
    pub fn svgp_state(&self) -> Result<SvgpState<f64>, ModelError> {
        if self.head != Head::Gp {
            return Err(ModelError::Invalid("model has no GP head".into()));
        }
        Ok(SvgpState::from_params(&self.params.filter_prefix("gp."))?)
    }

    /// Evaluation-mode latents `[n, m]` for the given samples.
    pub fn latents(&self, sequences: &[PatientSequence], samples: &[PrefixSample]) -> Result<Tensor<f64>, ModelError> {
        let m = self.latent_dim();
        let chunks: Vec<Vec<f64>> = samples
            .par_chunks(ENCODE_CHUNK)
            .map(|chunk| {
                let tensors: Vec<Tensor<f64>> = chunk.iter().map(|s| sample_tensor(sequences, s)).collect();
                let refs: Vec<&Tensor<f64>> = tensors.iter().collect();
                Ok(encode_batch(&self.extractor, &self.params, &refs)?.into_data())
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Tensor::matrix(samples.len(), m, chunks.concat())?)
    }

    /// Predictive distributions for latents `h` of shape `[n, m]`.
    pub fn predict_latents(&self, h: &Tensor<f64>) -> Result<Vec<GaussianPrediction>, ModelError> {
        match self.head {
            Head::Gp => Ok(svgp_predict(&self.svgp_state()?, h)?),
            Head::Mle => {
                let variance = self
                    .mle_variance
                    .ok_or_else(|| ModelError::Invalid("linear head has no predictive variance".into()))?;
                let m = h.cols();
                h.data()
                    .chunks(m.max(1))
                    .map(|row| {
                        Ok(GaussianPrediction {
                            mean: mle_head(&self.params, row)?,
                            latent_var: 0.0,
                            noise_var: variance,
                        })
                    })
                    .collect()
            }
        }
    }

    pub fn predict(
        &self,
        sequences: &[PatientSequence],
        samples: &[PrefixSample],
    ) -> Result<Vec<GaussianPrediction>, ModelError> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        self.predict_latents(&self.latents(sequences, samples)?)
    }

    /// Latent, predictive mean and observation-level variance after every
    /// record of every sequence, with times in days since the first record.
    pub fn patient_outputs(&self, sequences: &[PatientSequence]) -> Result<Vec<PatientOutputs>, ModelError> {
        let mut samples = Vec::new();
        for (s, seq) in sequences.iter().enumerate() {
            for end in 1..=seq.records.len() {
                samples.push(PrefixSample {
                    sequence: s,
                    start: end.saturating_sub(self.max_prefix.max(1)),
                    end,
                    target: f64::NAN,
                });
            }
        }
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let h = self.latents(sequences, &samples)?;
        let preds = self.predict_latents(&h)?;
        let m = self.latent_dim();
        let mut out = Vec::with_capacity(sequences.len());
        let mut row = 0;
        for seq in sequences {
            let Some(first) = seq.records.first() else {
                continue;
            };
            let t0 = first.timestamp;
            let n = seq.records.len();
            out.push(PatientOutputs {
                patient_id: seq.patient_id.clone(),
                times: seq
                    .records
                    .iter()
                    .map(|r| (r.timestamp - t0).num_seconds() as f64 / 86_400.0)
                    .collect(),
                latents: (row..row + n).map(|i| h.data()[i * m..(i + 1) * m].to_vec()).collect(),
                means: preds[row..row + n].iter().map(|p| p.mean).collect(),
                variances: preds[row..row + n].iter().map(|p| p.obs_var()).collect(),
            });
            row += n;
        }
        Ok(out)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format: ModelFile::FORMAT.into(),
            extractor: self.extractor.clone(),
            head: self.head,
            max_prefix: self.max_prefix,
            mle_variance: self.mle_variance,
            params: self.params.to_checkpoint(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        if file.format != ModelFile::FORMAT {
            return Err(ModelError::Invalid(format!("unsupported model format {:?}", file.format)));
        }
        file.extractor.validate()?;
        let model = Self {
            params: ParamStore::from_checkpoint(&file.params)?,
            extractor: file.extractor,
            head: file.head,
            max_prefix: file.max_prefix,
            mle_variance: file.mle_variance,
        };
        if model.head == Head::Gp {
            model.svgp_state()?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let json = serde_json::to_string(&self.to_file()).map_err(|e| ModelError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(path, json).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| ModelError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }
}
