use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{prefix_samples, CleanPatient, FeatureGroup, FeatureLayout, PatientSequence};
use crate::evaluation::{run_experiment, EvalError, MetricReport};
use crate::model::{DklModel, TrainConfig};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub group: FeatureGroup,
    pub report: MetricReport,
    /// Test MSE change relative to the unablated model.
    pub delta_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub baseline: MetricReport,
    pub rows: Vec<AblationRow>,
}

/// Zeroes one group's features in every split, retrains from scratch with
/// `seed` and scores the test split.
pub fn ablate_feature_group(
    patients: &[CleanPatient],
    layout: &FeatureLayout,
    config: &TrainConfig,
    group: FeatureGroup,
    seed: u64,
) -> Result<MetricReport, EvalError> {
    Ok(run_experiment(patients, layout, config, seed, Some(group))?.0.model)
}

/// The unablated model followed by one retrained model per group, all on the
/// same split and seed.
pub fn ablation_study(
    patients: &[CleanPatient],
    layout: &FeatureLayout,
    config: &TrainConfig,
    groups: &[FeatureGroup],
    seed: u64,
) -> Result<AblationTable, EvalError> {
    let baseline = run_experiment(patients, layout, config, seed, None)?.0.model;
    let rows = groups
        .iter()
        .map(|&group| {
            let report = ablate_feature_group(patients, layout, config, group, seed)?;
            Ok(AblationRow {
                group,
                delta_mse: report.mse - baseline.mse,
                report,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(AblationTable { seed, baseline, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub group: FeatureGroup,
    pub seed: u64,
    pub mse: f64,
    pub permuted_mse: f64,
    pub delta_mse: f64,
}

/// MSE increase on `sequences` after shuffling the group's feature block
/// across all records with a seeded permutation. The model is not retrained.
pub fn permutation_importance(
    model: &DklModel,
    sequences: &[PatientSequence],
    layout: &FeatureLayout,
    group: FeatureGroup,
    seed: u64,
) -> Result<ImportanceReport, EvalError> {
    if model.extractor.input_dim != layout.dim() {
        return Err(EvalError::Invalid(format!(
            "model expects {} features, layout has {}",
            model.extractor.input_dim,
            layout.dim()
        )));
    }
    let samples = prefix_samples(sequences, model.max_prefix);
    if samples.is_empty() {
        return Err(EvalError::Invalid("no samples with a target".into()));
    }
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let mse_of = |seqs: &[PatientSequence]| -> Result<f64, EvalError> {
        let preds = model.predict(seqs, &samples)?;
        Ok(preds.iter().zip(&targets).map(|(p, y)| (p.mean - y).powi(2)).sum::<f64>() / targets.len() as f64)
    };
    let idx = group.indices(layout);
    let blocks: Vec<Vec<f64>> = sequences
        .iter()
        .flat_map(|s| &s.records)
        .map(|r| idx.iter().map(|&i| r.features[i]).collect())
        .collect();
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.shuffle(&mut rng::stream(seed, &format!("evaluation.permute.{}", group.name())));
    let mut permuted = sequences.to_vec();
    for (r, &src) in permuted.iter_mut().flat_map(|s| &mut s.records).zip(&order) {
        for (&i, &v) in idx.iter().zip(&blocks[src]) {
            r.features[i] = v;
        }
    }
    let mse = mse_of(sequences)?;
    let permuted_mse = mse_of(&permuted)?;
    Ok(ImportanceReport {
        group,
        seed,
        mse,
        permuted_mse,
        delta_mse: permuted_mse - mse,
    })
}
