use serde::{Deserialize, Serialize};

use crate::cluster::ClusterError;

pub const DEFAULT_GRID: usize = 32;

/// Per-record model outputs of one patient, in record order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientOutputs {
    pub patient_id: String,
    /// Record times in any unit, non-decreasing.
    pub times: Vec<f64>,
    pub latents: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub grid: usize,
    /// Profile the variance channel as `ln σ²`.
    pub log_variance: bool,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            log_variance: true,
        }
    }
}

/// Channels resampled onto a uniform grid over normalized visit time and
/// flattened channel by channel: latent dims first, then mean, then variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryProfile {
    pub patient_id: String,
    pub grid: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl TrajectoryProfile {
    pub fn channel(&self, k: usize) -> &[f64] {
        &self.values[k * self.grid..(k + 1) * self.grid]
    }
}

/// Linear interpolation of `(t, y)` (t ascending, in `[0, 1]`) at `x`.
fn interpolate(t: &[f64], y: &[f64], x: f64) -> f64 {
    if t.len() == 1 || x <= t[0] {
        return y[0];
    }
    let last = t.len() - 1;
    if x >= t[last] {
        return y[last];
    }
    let i = t.partition_point(|&v| v <= x).min(last);
    let (t0, t1) = (t[i - 1], t[i]);
    if t1 == t0 {
        return y[i];
    }
    y[i - 1] + (y[i] - y[i - 1]) * (x - t0) / (t1 - t0)
}

fn profile(p: &PatientOutputs, config: &ProfileConfig) -> Result<TrajectoryProfile, ClusterError> {
    let r = p.times.len();
    if r == 0 || p.latents.len() != r || p.means.len() != r || p.variances.len() != r {
        return Err(ClusterError::Invalid(format!("inconsistent outputs for patient {}", p.patient_id)));
    }
    if p.times.windows(2).any(|w| w[1] < w[0]) {
        return Err(ClusterError::Invalid(format!("unsorted times for patient {}", p.patient_id)));
    }
    let m = p.latents[0].len();
    if p.latents.iter().any(|l| l.len() != m) {
        return Err(ClusterError::Ragged);
    }
    let (t0, t1) = (p.times[0], p.times[r - 1]);
    let span = t1 - t0;
    let t: Vec<f64> = p.times.iter().map(|&v| if span > 0.0 { (v - t0) / span } else { 0.0 }).collect();
    let g = config.grid;
    let grid: Vec<f64> = (0..g).map(|i| if g == 1 { 0.0 } else { i as f64 / (g - 1) as f64 }).collect();
    let mut channels: Vec<Vec<f64>> = (0..m).map(|k| p.latents.iter().map(|l| l[k]).collect()).collect();
    channels.push(p.means.clone());
    channels.push(
        p.variances
            .iter()
            .map(|&v| if config.log_variance { v.max(f64::MIN_POSITIVE).ln() } else { v })
            .collect(),
    );
    let mut values = Vec::with_capacity(g * channels.len());
    for ch in &channels {
        values.extend(grid.iter().map(|&x| interpolate(&t, ch, x)));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    Ok(TrajectoryProfile {
        patient_id: p.patient_id.clone(),
        grid: g,
        channels: m + 2,
        values,
    })
}

/// One profile per patient, in input order. Each profile depends only on
/// that patient's outputs.
pub fn build_profiles(outputs: &[PatientOutputs], config: &ProfileConfig) -> Result<Vec<TrajectoryProfile>, ClusterError> {
    if config.grid == 0 {
        return Err(ClusterError::Invalid("grid must be positive".into()));
    }
    outputs.iter().map(|p| profile(p, config)).collect()
}
