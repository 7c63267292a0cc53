use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cluster::{check_points, sq_dist, ClusterError, ClusterResult, Method};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmeansConfig {
    pub max_iter: usize,
    /// Stop once no center moves farther than this.
    pub tol: f64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KmeansFit {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares after every assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding: the first center uniformly, then each next center with
/// probability proportional to its squared distance to the closest chosen one.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// Lloyd iterations from k-means++ seeding. An empty cluster's center is
/// moved to the point farthest from its own center.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, config: &KmeansConfig) -> Result<KmeansFit, ClusterError> {
    let d = check_points(points, k)?;
    let mut rng = rng::stream(seed, "cluster.kmeans");
    let mut centers = seed_centers(points, k, &mut rng);
    let mut labels = vec![0; points.len()];
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..config.max_iter.max(1) {
        iterations += 1;
        let mut obj = 0.0;
        let mut dists = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let (l, dd) = nearest(p, &centers);
            labels[i] = l;
            obj += dd;
            dists.push(dd);
        }
        objective.push(obj);
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved: f64 = 0.0;
        for j in 0..k {
            let new = if counts[j] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                dists[far] = 0.0;
                points[far].clone()
            } else {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            };
            moved = moved.max(sq_dist(&new, &centers[j]).sqrt());
            centers[j] = new;
        }
        if moved <= config.tol {
            break;
        }
    }
    let mut obj = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (l, dd) = nearest(p, &centers);
        labels[i] = l;
        obj += dd;
    }
    objective.push(obj);
    Ok(KmeansFit {
        centers,
        labels,
        objective,
        iterations,
    })
}

/// k-means on flattened profiles with the default iteration limits.
pub fn functional_kmeans(points: &[Vec<f64>], c: usize, seed: u64) -> Result<ClusterResult, ClusterError> {
    let fit = kmeans(points, c, seed, &KmeansConfig::default())?;
    Ok(ClusterResult::new(Method::Kmeans, fit.labels))
}
