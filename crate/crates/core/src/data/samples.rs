use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::PatientSequence;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_PREFIX: usize = 32;

/// A supervised sample: records `start..end` of one sequence, predicting the
/// target of record `end - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixSample {
    pub sequence: usize,
    pub start: usize,
    pub end: usize,
    pub target: f64,
}

impl PrefixSample {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// One sample per record with a target, using at most the `max_prefix` most
/// recent records up to and including it.
pub fn prefix_samples(sequences: &[PatientSequence], max_prefix: usize) -> Vec<PrefixSample> {
    let max_prefix = max_prefix.max(1);
    let mut out = Vec::new();
    for (s, seq) in sequences.iter().enumerate() {
        for (t, rec) in seq.records.iter().enumerate() {
            if let Some(target) = rec.target {
                let end = t + 1;
                out.push(PrefixSample {
                    sequence: s,
                    start: end.saturating_sub(max_prefix),
                    end,
                    target,
                });
            }
        }
    }
    out
}

/// The sample's records as a `[t, d]` tensor.
pub fn sample_tensor<T: Scalar>(sequences: &[PatientSequence], sample: &PrefixSample) -> Tensor<T> {
    let recs = &sequences[sample.sequence].records[sample.start..sample.end];
    let d = recs.first().map_or(0, |r| r.features.len());
    Tensor::from_fn(recs.len(), d, |i, j| T::of(recs[i].features[j]))
}
