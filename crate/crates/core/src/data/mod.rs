//! Encounter ingestion, logMAR targets, feature assembly, normalization,
//! patient-level splits and the synthetic cohort generator.

mod acuity;
mod features;
mod io;
mod preprocess;
mod raw;
mod samples;
mod split;
mod synthetic;

pub use acuity::{aggregate_acuity, logmar_to_snellen, snellen_to_logmar, AcuityCodes};
pub use features::{
    assemble_features, encode_encounter, FeatureGroup, FeatureLayout, NormalizationStats, TextField,
    DEFAULT_EMBEDDING_DIM,
};
pub use io::{read_dataset, read_labels, write_dataset, write_labels, DatasetFiles};
pub use preprocess::{
    clean_encounters, encode_patients, prepare_dataset, CleanEncounter, CleanPatient, EncodedRecord, IngestReport, PatientSequence,
    PreprocessConfig, SplitDataset, sort_and_dedup,
};
pub use raw::{read_csv, read_jsonl, write_jsonl, Ingested, RawEncounter, SkippedLine};
pub use samples::{prefix_samples, sample_tensor, PrefixSample, DEFAULT_MAX_PREFIX};
pub use split::{split_patients, SplitIds, MIN_PATIENTS};
pub use synthetic::{generate_synthetic_cohort, Archetype, CohortLabel, SyntheticCohort, SyntheticConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed acuity entry {0:?}")]
    Acuity(String),
    #[error("embedding {field} has length {got}, expected {expected}")]
    Embedding { field: String, expected: usize, got: usize },
    #[error("unknown embedded field {0:?}")]
    UnknownField(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("need at least {needed} patients, got {got}")]
    TooFewPatients { needed: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
