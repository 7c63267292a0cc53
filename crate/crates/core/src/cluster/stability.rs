use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{adjusted_rand_index, check_points, cluster, normalized_mutual_info, ClusterError, Method};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub n_runs: usize,
    /// Share of points kept per run for the deterministic linkages; `1.0`
    /// reruns them on identical inputs.
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            n_runs: 100,
            subsample_fraction: 0.9,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub method: Method,
    pub c: usize,
    pub n_runs: usize,
    pub nmi_mean: f64,
    pub nmi_std: f64,
    pub ari_mean: f64,
    pub ari_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Repeats the clustering `n_runs` times and scores agreement between
/// consecutive runs. Stochastic methods change their seed per run on the
/// full data; deterministic linkages are rerun on random subsamples and
/// compared on the points two runs share.
pub fn stability_protocol(
    points: &[Vec<f64>],
    method: Method,
    c: usize,
    config: &StabilityConfig,
) -> Result<StabilityReport, ClusterError> {
    if config.n_runs < 2 {
        return Err(ClusterError::Invalid("stability needs at least two runs".into()));
    }
    if !(config.subsample_fraction > 0.0 && config.subsample_fraction <= 1.0) {
        return Err(ClusterError::Invalid("subsample_fraction must lie in (0, 1]".into()));
    }
    let n = points.len();
    check_points(points, c)?;
    let keep = ((config.subsample_fraction * n as f64).round() as usize).clamp(c, n);
    let runs: Vec<Vec<Option<usize>>> = (0..config.n_runs)
        .into_par_iter()
        .map(|r| {
            let mut stream = rng::indexed_stream(config.seed, "cluster.stability", r as u64);
            let mut labels = vec![None; n];
            if method.is_stochastic() || keep == n {
                let run_seed = stream.random::<u64>();
                for (slot, l) in labels.iter_mut().zip(cluster(points, method, c, run_seed)?.labels) {
                    *slot = Some(l);
                }
            } else {
                let mut idx = sample(&mut stream, n, keep).into_vec();
                idx.sort_unstable();
                let subset: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
                for (&i, l) in idx.iter().zip(cluster(&subset, method, c, 0)?.labels) {
                    labels[i] = Some(l);
                }
            }
            Ok(labels)
        })
        .collect::<Result<_, ClusterError>>()?;
    let mut nmi = Vec::with_capacity(config.n_runs - 1);
    let mut ari = Vec::with_capacity(config.n_runs - 1);
    for pair in runs.windows(2) {
        let (a, b): (Vec<usize>, Vec<usize>) = pair[0]
            .iter()
            .zip(&pair[1])
            .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
            .unzip();
        nmi.push(normalized_mutual_info(&a, &b));
        ari.push(adjusted_rand_index(&a, &b));
    }
    let (nmi_mean, nmi_std) = mean_std(&nmi);
    let (ari_mean, ari_std) = mean_std(&ari);
    Ok(StabilityReport {
        method,
        c,
        n_runs: config.n_runs,
        nmi_mean,
        nmi_std,
        ari_mean,
        ari_std,
    })
}
