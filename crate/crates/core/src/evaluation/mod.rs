//! Point and probabilistic metrics, the multi-seed protocol, feature-group
//! ablation and permutation importance, with JSON and text reports.

mod ablation;
mod metrics;
mod protocol;
mod report;

pub use ablation::{ablate_feature_group, ablation_study, permutation_importance, AblationRow, AblationTable, ImportanceReport};
pub use metrics::{
    crps_gaussian, crps_normal, interval_coverage, metric_report, point_metrics, MetricReport, PointMetrics,
    CLINICAL_TOLERANCE,
};
pub use protocol::{
    evaluate_model, run_experiment, run_seed_protocol, MeanStd, ModelComparison, SeedResult, SeedSummary, SummaryRow,
    DEFAULT_SEEDS,
};
pub use report::{ablation_text, aligned_table, comparison_text, importance_text, seed_summary_text, to_json};

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("seed {seed} failed after {} completed seeds: {source}", partial.len())]
    SeedFailed {
        seed: u64,
        #[source]
        source: Box<EvalError>,
        partial: Vec<SeedResult>,
    },
    #[error("{0}")]
    Invalid(String),
}

impl EvalError {
    pub fn is_numerical(&self) -> bool {
        match self {
            EvalError::Model(e) => e.is_numerical(),
            EvalError::SeedFailed { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
