use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use trajgp::cluster::{Method, ProfileConfig, SelectConfig, StabilityConfig};
use trajgp::data::{FeatureGroup, FeatureLayout, PreprocessConfig, SyntheticConfig};
use trajgp::evaluation::DEFAULT_SEEDS;
use trajgp::extractors::{Arch, ArchDefaults, ExtractorConfig, DEFAULT_DROPOUT};
use trajgp::model::{Head, TrainConfig};

use crate::error::CliError;

/// Metric names accepted in the `metrics` list, in report order.
pub const METRIC_NAMES: [&str; 6] = ["mse", "mae", "r2", "clinical_accuracy", "crps", "coverage95"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub data: DataSection,
    pub model: ModelSection,
    pub gp: GpSection,
    pub metrics: Vec<String>,
    pub clustering: ClusteringSection,
    pub ablation: GroupSection,
    pub importance: GroupSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            seeds: DEFAULT_SEEDS.to_vec(),
            data: DataSection::default(),
            model: ModelSection::default(),
            gp: GpSection::default(),
            metrics: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
            clustering: ClusteringSection::default(),
            ablation: GroupSection::default(),
            importance: GroupSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_patients: usize,
    pub synthetic: SyntheticConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_patients: 1000,
            synthetic: SyntheticConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

/// Extractor settings. Sizes left out take the grid optimum for `arch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub arch: Arch,
    pub head: Head,
    pub hidden_dim: Option<usize>,
    pub num_layers: Option<usize>,
    pub num_heads: Option<usize>,
    pub feedforward_dim: Option<usize>,
    pub decoder_dim: Option<usize>,
    pub latent_dim: Option<usize>,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            arch: Arch::Transformer,
            head: Head::Gp,
            hidden_dim: None,
            num_layers: None,
            num_heads: None,
            feedforward_dim: None,
            decoder_dim: None,
            latent_dim: None,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

/// Optimization settings. A missing learning rate takes the grid optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSection {
    pub num_inducing: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: Option<f64>,
    pub max_prefix: usize,
    pub clip_norm: Option<f64>,
    pub warmup_samples: usize,
}

impl Default for GpSection {
    fn default() -> Self {
        let t = TrainConfig::defaults(Arch::Transformer, 1, Head::Gp);
        Self {
            num_inducing: t.num_inducing,
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: None,
            max_prefix: t.max_prefix,
            clip_norm: None,
            warmup_samples: t.warmup_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSection {
    pub methods: Vec<Method>,
    pub cluster_counts: Vec<usize>,
    pub grid: usize,
    pub log_variance: bool,
    pub stability_runs: usize,
    pub subsample_fraction: f64,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        let select = SelectConfig::default();
        let stability = StabilityConfig::default();
        let profile = ProfileConfig::default();
        Self {
            methods: select.methods,
            cluster_counts: select.cluster_counts,
            grid: profile.grid,
            log_variance: profile.log_variance,
            stability_runs: stability.n_runs,
            subsample_fraction: stability.subsample_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupSection {
    pub groups: Vec<FeatureGroup>,
}

impl Default for GroupSection {
    fn default() -> Self {
        Self {
            groups: FeatureGroup::ALL.to_vec(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl ExperimentConfig {
    /// Reads a JSON configuration; without a path every default applies.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn layout(&self) -> FeatureLayout {
        self.data.preprocess.layout()
    }

    pub fn extractor(&self) -> ExtractorConfig {
        let m = &self.model;
        let d = ArchDefaults::of(m.arch);
        ExtractorConfig {
            arch: m.arch,
            input_dim: self.layout().dim(),
            hidden_dim: m.hidden_dim.unwrap_or(d.hidden_dim),
            num_layers: m.num_layers.unwrap_or(d.num_layers),
            num_heads: m.num_heads.unwrap_or(d.num_heads),
            feedforward_dim: m.feedforward_dim.unwrap_or(d.feedforward_dim),
            decoder_dim: m.decoder_dim.unwrap_or(d.decoder_dim),
            latent_dim: m.latent_dim.unwrap_or(d.latent_dim),
            dropout: m.dropout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let g = &self.gp;
        TrainConfig {
            extractor: self.extractor(),
            head: self.model.head,
            num_inducing: g.num_inducing,
            batch_size: g.batch_size,
            epochs: g.epochs,
            learning_rate: g.learning_rate.unwrap_or(ArchDefaults::of(self.model.arch).learning_rate),
            max_prefix: g.max_prefix,
            clip_norm: g.clip_norm,
            warmup_samples: g.warmup_samples,
            seed: self.seed,
        }
    }

    pub fn select_config(&self) -> SelectConfig {
        SelectConfig {
            methods: self.clustering.methods.clone(),
            cluster_counts: self.clustering.cluster_counts.clone(),
            seed: self.seed,
        }
    }

    pub fn stability_config(&self) -> StabilityConfig {
        StabilityConfig {
            n_runs: self.clustering.stability_runs,
            subsample_fraction: self.clustering.subsample_fraction,
            seed: self.seed,
        }
    }

    pub fn profile_config(&self) -> ProfileConfig {
        ProfileConfig {
            grid: self.clustering.grid,
            log_variance: self.clustering.log_variance,
        }
    }

    /// Checks every section before any work starts. Extractor problems are
    /// reported under their `model.*` keys.
    pub fn validate(&self) -> Result<(), CliError> {
        self.data.synthetic.validate().map_err(|e| config_err(format!("data.synthetic: {e}")))?;
        if self.data.synthetic.embedding_dim != self.data.preprocess.embedding_dim {
            return Err(config_err(format!(
                "data.synthetic.embedding_dim ({}) differs from data.preprocess.embedding_dim ({})",
                self.data.synthetic.embedding_dim, self.data.preprocess.embedding_dim
            )));
        }
        self.data
            .preprocess
            .acuity_codes
            .validate()
            .map_err(|e| config_err(format!("data.preprocess.acuity_codes: {e}")))?;
        self.train_config()
            .validate()
            .map_err(|e| config_err(format!("model/gp: {e}")))?;
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err("seeds must be distinct"));
        }
        for m in &self.metrics {
            if !METRIC_NAMES.contains(&m.as_str()) {
                return Err(config_err(format!(
                    "unknown metric {m:?}; valid metrics: {}",
                    METRIC_NAMES.join(", ")
                )));
            }
        }
        let c = &self.clustering;
        if c.methods.is_empty() || c.cluster_counts.is_empty() {
            return Err(config_err("clustering.methods and clustering.cluster_counts must not be empty"));
        }
        if c.cluster_counts.iter().any(|&k| k < 2) {
            return Err(config_err("clustering.cluster_counts must be at least 2"));
        }
        if c.grid < 2 {
            return Err(config_err("clustering.grid must be at least 2"));
        }
        if c.stability_runs < 2 {
            return Err(config_err("clustering.stability_runs must be at least 2"));
        }
        if !(c.subsample_fraction > 0.0 && c.subsample_fraction <= 1.0) {
            return Err(config_err("clustering.subsample_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    /// SHA-256 of the configuration serialized with sorted keys.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("configuration serializes");
        let canonical = serde_json::to_string(&value).expect("JSON value serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
