use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster, linkage, validity_metrics, ClusterError, ClusterResult, Linkage, Method};

/// Solutions whose smallest cluster holds less than this share of the
/// points are flagged as imbalanced.
pub const IMBALANCE_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    pub methods: Vec<Method>,
    pub cluster_counts: Vec<usize>,
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            cluster_counts: vec![2, 3, 4, 5],
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub c: usize,
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    pub sizes: Vec<usize>,
    pub imbalanced: bool,
    /// Why the row has no scores, when the solution could not be scored.
    pub excluded: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub method: Method,
    pub c: usize,
    pub rows: Vec<ComparisonRow>,
    pub labels: ClusterResult,
}

fn row(points: &[Vec<f64>], result: &ClusterResult, c: usize) -> ComparisonRow {
    let n = points.len();
    match validity_metrics(points, &result.labels) {
        Ok(v) => ComparisonRow {
            method: result.method,
            c,
            silhouette: v.silhouette,
            davies_bouldin: v.davies_bouldin,
            calinski_harabasz: v.calinski_harabasz,
            imbalanced: v.sizes.iter().any(|&s| (s as f64) < IMBALANCE_FRACTION * n as f64),
            sizes: v.sizes,
            excluded: None,
        },
        Err(e) => ComparisonRow {
            method: result.method,
            c,
            silhouette: f64::NAN,
            davies_bouldin: f64::NAN,
            calinski_harabasz: f64::NAN,
            sizes: result.sizes.clone(),
            imbalanced: true,
            excluded: Some(e.to_string()),
        },
    }
}

/// Scores every method and cluster count and picks the best silhouette
/// among balanced solutions, breaking ties by the lower Davies–Bouldin
/// index. Rows come out ordered by method, then cluster count.
pub fn model_select(points: &[Vec<f64>], config: &SelectConfig) -> Result<ModelSelection, ClusterError> {
    let mut jobs: Vec<(Method, usize)> = Vec::new();
    for &m in &config.methods {
        for &c in &config.cluster_counts {
            jobs.push((m, c));
        }
    }
    let trees: Vec<(Method, crate::cluster::Dendrogram)> = config
        .methods
        .par_iter()
        .filter_map(|&m| match m {
            Method::Ward => Some((m, Linkage::Ward)),
            Method::Average => Some((m, Linkage::Average)),
            _ => None,
        })
        .map(|(m, l)| linkage(points, l).map(|d| (m, d)))
        .collect::<Result<_, _>>()?;
    let results: Vec<(ClusterResult, ComparisonRow)> = jobs
        .par_iter()
        .map(|&(m, c)| {
            let result = match trees.iter().find(|(tm, _)| *tm == m) {
                Some((_, tree)) => ClusterResult::new(m, tree.cut(c)?),
                None => cluster(points, m, c, config.seed)?,
            };
            let r = row(points, &result, c);
            Ok((result, r))
        })
        .collect::<Result<_, ClusterError>>()?;
    let best = results
        .iter()
        .filter(|(_, r)| !r.imbalanced && r.excluded.is_none())
        .min_by(|(_, a), (_, b)| {
            b.silhouette
                .total_cmp(&a.silhouette)
                .then(a.davies_bouldin.total_cmp(&b.davies_bouldin))
        })
        .ok_or_else(|| ClusterError::Invalid("no balanced clustering solution".into()))?;
    Ok(ModelSelection {
        method: best.0.method,
        c: best.1.c,
        labels: best.0.clone(),
        rows: results.iter().map(|(_, r)| r.clone()).collect(),
    })
}
