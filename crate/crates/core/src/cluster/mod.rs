//! Trajectory profiles and their clustering: agglomerative (Ward and
//! average linkage), k-means, diagonal Gaussian mixtures, validity and
//! agreement scores, stability runs and model selection.

mod agreement;
mod export;
mod gmm;
mod hierarchical;
mod kmeans;
mod profiles;
mod select;
mod stability;
mod validity;

pub use agreement::{adjusted_rand_index, normalized_mutual_info};
pub use export::{cluster_summaries, write_assignments, write_summaries, ClusterSummaryRow};
pub use gmm::{fit_gmm, gmm_cluster, GmmConfig, GmmFit};
pub use hierarchical::{agglomerative_cluster, linkage, Dendrogram, Linkage, Merge};
pub use kmeans::{functional_kmeans, kmeans, KmeansConfig, KmeansFit};
pub use profiles::{build_profiles, PatientOutputs, ProfileConfig, TrajectoryProfile, DEFAULT_GRID};
pub use select::{model_select, ComparisonRow, ModelSelection, SelectConfig, IMBALANCE_FRACTION};
pub use stability::{stability_protocol, StabilityConfig, StabilityReport};
pub use validity::{calinski_harabasz, davies_bouldin, silhouette, validity_metrics, ValidityReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("cannot form {c} clusters from {n} points")]
    TooFewPoints { n: usize, c: usize },
    #[error("points have inconsistent dimensions")]
    Ragged,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ward,
    Average,
    Kmeans,
    Gmm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ward, Method::Average, Method::Kmeans, Method::Gmm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ward => "ward",
            Method::Average => "average",
            Method::Kmeans => "kmeans",
            Method::Gmm => "gmm",
        }
    }

    /// Whether repeated runs differ through random initialization.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Method::Kmeans | Method::Gmm)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ClusterError::Invalid(format!("unknown clustering method {s:?}")))
    }
}

/// A flat partition of `n` points.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub method: Method,
    pub c: usize,
    /// Cluster id per point, numbered by first appearance.
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl ClusterResult {
    pub fn new(method: Method, labels: Vec<usize>) -> Self {
        let labels = canonical_labels(&labels);
        let c = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0; c];
        for &l in &labels {
            sizes[l] += 1;
        }
        Self { method, c, labels, sizes }
    }
}

/// Relabels so that clusters are numbered in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

pub(crate) fn check_points(points: &[Vec<f64>], c: usize) -> Result<usize, ClusterError> {
    let n = points.len();
    if n < c || c == 0 {
        return Err(ClusterError::TooFewPoints { n, c });
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(ClusterError::Ragged);
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    Ok(d)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Runs `method` with `c` clusters. The seed is ignored by the
/// deterministic linkages.
pub fn cluster(points: &[Vec<f64>], method: Method, c: usize, seed: u64) -> Result<ClusterResult, ClusterError> {
    match method {
        Method::Ward => agglomerative_cluster(points, c, Linkage::Ward),
        Method::Average => agglomerative_cluster(points, c, Linkage::Average),
        Method::Kmeans => functional_kmeans(points, c, seed),
        Method::Gmm => gmm_cluster(points, c, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_numbering() {
        assert_eq!(canonical_labels(&[5, 5, 2, 9, 2]), vec![0, 0, 1, 2, 1]);
        let r = ClusterResult::new(Method::Ward, vec![3, 1, 3]);
        assert_eq!((r.c, r.sizes.clone()), (2, vec![2, 1]));
    }
}
