use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{prefix_samples, prepare_dataset, CleanPatient, FeatureGroup, FeatureLayout, SplitDataset};
use crate::evaluation::{metric_report, EvalError, MetricReport};
use crate::model::{train_dkl, ConstantBaseline, DklModel, TrainConfig};

/// Seeds of the default multi-seed protocol.
pub const DEFAULT_SEEDS: [u64; 10] = [42, 123, 456, 789, 1024, 2048, 3141, 5926, 8765, 4321];

/// Test-set metrics of a model next to the constant-mean baseline fitted on
/// the training targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub model: MetricReport,
    pub baseline: MetricReport,
}

pub fn evaluate_model(model: &DklModel, dataset: &SplitDataset) -> Result<ModelComparison, EvalError> {
    let test = prefix_samples(&dataset.test, model.max_prefix);
    if test.is_empty() {
        return Err(EvalError::Invalid("test split has no samples with a target".into()));
    }
    let targets: Vec<f64> = test.iter().map(|s| s.target).collect();
    let preds = model.predict(&dataset.test, &test)?;
    let train_targets: Vec<f64> = prefix_samples(&dataset.train, model.max_prefix)
        .iter()
        .map(|s| s.target)
        .collect();
    let baseline = ConstantBaseline::fit(&train_targets)?;
    Ok(ModelComparison {
        model: metric_report(&preds, &targets)?,
        baseline: metric_report(&baseline.predict(targets.len()), &targets)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub model: MetricReport,
    pub baseline: MetricReport,
}

/// Split by `seed`, optionally ablate a feature group, train from scratch
/// with `seed` and score the test split.
pub fn run_experiment(
    patients: &[CleanPatient],
    layout: &FeatureLayout,
    config: &TrainConfig,
    seed: u64,
    ablate: Option<FeatureGroup>,
) -> Result<(SeedResult, DklModel), EvalError> {
    if config.extractor.input_dim != layout.dim() {
        return Err(EvalError::Invalid(format!(
            "extractor input_dim {} does not match the feature width {}",
            config.extractor.input_dim,
            layout.dim()
        )));
    }
    let mut dataset = prepare_dataset(patients, layout, seed)?;
    if let Some(group) = ablate {
        dataset.ablate(group);
    }
    let mut cfg = config.clone();
    cfg.seed = seed;
    let outcome = train_dkl(&cfg, &dataset.train, &dataset.val)?;
    let cmp = evaluate_model(&outcome.model, &dataset)?;
    Ok((
        SeedResult {
            seed,
            best_epoch: outcome.best_epoch,
            model: cmp.model,
            baseline: cmp.baseline,
        },
        outcome.model,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation, absent for a single value.
    pub std: Option<f64>,
}

impl MeanStd {
    /// Values are reduced in the order given.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Self { mean, std })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mse: MeanStd,
    pub mae: MeanStd,
    /// Over the seeds where R² is defined.
    pub r2: Option<MeanStd>,
    pub clinical_accuracy: MeanStd,
    pub crps: MeanStd,
    pub coverage95: MeanStd,
}

impl SummaryRow {
    fn of(reports: &[MetricReport]) -> Self {
        let col = |f: fn(&MetricReport) -> f64| {
            MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>()).expect("at least one report")
        };
        Self {
            mse: col(|r| r.mse),
            mae: col(|r| r.mae),
            r2: MeanStd::of(&reports.iter().filter_map(|r| r.r2).collect::<Vec<_>>()),
            clinical_accuracy: col(|r| r.clinical_accuracy),
            crps: col(|r| r.crps),
            coverage95: col(|r| r.coverage95),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    /// Seeds in ascending order, matching `per_seed`.
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedResult>,
    pub model: SummaryRow,
    pub baseline: SummaryRow,
}

impl SeedSummary {
    /// Aggregates per-seed results in ascending seed order, so the summary
    /// does not depend on the order the seeds were listed or finished in.
    pub fn from_results(mut per_seed: Vec<SeedResult>) -> Result<Self, EvalError> {
        if per_seed.is_empty() {
            return Err(EvalError::Invalid("no seed results to summarize".into()));
        }
        per_seed.sort_by_key(|r| r.seed);
        if per_seed.windows(2).any(|w| w[0].seed == w[1].seed) {
            return Err(EvalError::Invalid("duplicate seed in protocol".into()));
        }
        let model: Vec<MetricReport> = per_seed.iter().map(|r| r.model).collect();
        let baseline: Vec<MetricReport> = per_seed.iter().map(|r| r.baseline).collect();
        Ok(Self {
            seeds: per_seed.iter().map(|r| r.seed).collect(),
            model: SummaryRow::of(&model),
            baseline: SummaryRow::of(&baseline),
            per_seed,
        })
    }
}

/// Runs the full split, train and test pipeline once per seed, in parallel.
/// If a seed fails, the error carries the results of the seeds that
/// completed.
pub fn run_seed_protocol(
    patients: &[CleanPatient],
    layout: &FeatureLayout,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<SeedSummary, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::Invalid("the seed protocol needs at least one seed".into()));
    }
    let outcomes: Vec<Result<SeedResult, EvalError>> = seeds
        .par_iter()
        .map(|&seed| run_experiment(patients, layout, config, seed, None).map(|(r, _)| r))
        .collect();
    let mut done = Vec::new();
    let mut failure = None;
    for (seed, outcome) in seeds.iter().zip(outcomes) {
        match outcome {
            Ok(r) => done.push(r),
            Err(e) if failure.is_none() => failure = Some((*seed, e)),
            Err(_) => {}
        }
    }
    if let Some((seed, source)) = failure {
        return Err(EvalError::SeedFailed {
            seed,
            source: Box::new(source),
            partial: done,
        });
    }
    SeedSummary::from_results(done)
}
