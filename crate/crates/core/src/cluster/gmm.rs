use serde::{Deserialize, Serialize};

use crate::cluster::{check_points, kmeans, ClusterError, ClusterResult, KmeansConfig, Method};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmConfig {
    pub max_iter: usize,
    /// Stop once the mean per-point log-likelihood improves by less than this.
    pub tol: f64,
    pub variance_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            variance_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Total log-likelihood after every EM iteration, the first of which
    /// starts from the k-means partition.
    pub log_likelihood: Vec<f64>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn log_component(p: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((x, m), v) in p.iter().zip(mean).zip(var) {
        s += (x - m) * (x - m) / v + v.ln() + LN_2PI;
    }
    -0.5 * s
}

/// E-step: responsibilities and total log-likelihood.
fn expectation(points: &[Vec<f64>], w: &[f64], means: &[Vec<f64>], vars: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let k = w.len();
    let mut total = 0.0;
    let resp = points
        .iter()
        .map(|p| {
            let logs: Vec<f64> = (0..k)
                .map(|j| if w[j] > 0.0 { w[j].ln() + log_component(p, &means[j], &vars[j]) } else { f64::NEG_INFINITY })
                .collect();
            let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + logs.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
            total += lse;
            logs.iter().map(|l| (l - lse).exp()).collect()
        })
        .collect();
    (resp, total)
}

/// EM for a mixture of diagonal Gaussians, started from a seeded k-means
/// partition.
pub fn fit_gmm(points: &[Vec<f64>], k: usize, seed: u64, config: &GmmConfig) -> Result<GmmFit, ClusterError> {
    let d = check_points(points, k)?;
    let n = points.len();
    let init = kmeans(points, k, seed, &KmeansConfig::default())?;
    let mut resp: Vec<Vec<f64>> = init
        .labels
        .iter()
        .map(|&l| (0..k).map(|j| if j == l { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut weights = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    let mut vars = vec![vec![1.0; d]; k];
    let mut trace = Vec::new();
    let floor = config.variance_floor;
    for it in 0..=config.max_iter {
        for j in 0..k {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            weights[j] = nk / n as f64;
            if nk <= 0.0 {
                continue;
            }
            for c in 0..d {
                means[j][c] = resp.iter().zip(points).map(|(r, p)| r[j] * p[c]).sum::<f64>() / nk;
            }
            for c in 0..d {
                let m = means[j][c];
                let v = resp.iter().zip(points).map(|(r, p)| r[j] * (p[c] - m).powi(2)).sum::<f64>() / nk;
                vars[j][c] = v.max(floor);
            }
        }
        let (r, ll) = expectation(points, &weights, &means, &vars);
        resp = r;
        let done = trace.last().is_some_and(|&prev: &f64| (ll - prev) / n as f64 <= config.tol);
        trace.push(ll);
        if done || it == config.max_iter {
            break;
        }
    }
    let labels = resp
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(j, _)| j)
                .expect("k >= 1")
        })
        .collect();
    Ok(GmmFit {
        weights,
        means,
        variances: vars,
        labels,
        log_likelihood: trace,
    })
}

pub fn gmm_cluster(points: &[Vec<f64>], c: usize, seed: u64) -> Result<ClusterResult, ClusterError> {
    let fit = fit_gmm(points, c, seed, &GmmConfig::default())?;
    Ok(ClusterResult::new(Method::Gmm, fit.labels))
}
