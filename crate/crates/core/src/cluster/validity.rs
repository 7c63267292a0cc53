use serde::{Deserialize, Serialize};

use crate::cluster::{check_points, dist, sq_dist, ClusterError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    pub sizes: Vec<usize>,
}

/// Cluster count, sizes and centroids, requiring every id below the count
/// to be used and at least two clusters.
fn groups(points: &[Vec<f64>], labels: &[usize]) -> Result<(usize, Vec<usize>, Vec<Vec<f64>>), ClusterError> {
    let d = check_points(points, 1)?;
    if labels.len() != points.len() {
        return Err(ClusterError::Invalid(format!(
            "{} labels for {} points",
            labels.len(),
            points.len()
        )));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    let mut centroids = vec![vec![0.0; d]; k];
    for (p, &l) in points.iter().zip(labels) {
        sizes[l] += 1;
        for (c, v) in centroids[l].iter_mut().zip(p) {
            *c += v;
        }
    }
    if k < 2 || sizes.contains(&0) {
        return Err(ClusterError::Invalid(
            "validity metrics need at least two non-empty clusters".into(),
        ));
    }
    for (c, &s) in centroids.iter_mut().zip(&sizes) {
        c.iter_mut().for_each(|v| *v /= s as f64);
    }
    Ok((k, sizes, centroids))
}

/// Mean silhouette width with Euclidean distances. Points in singleton
/// clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64, ClusterError> {
    let (k, sizes, _) = groups(points, labels)?;
    let n = points.len();
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dist(&points[i], &points[j]);
            }
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Mean over clusters of the worst ratio of summed scatter to centroid
/// separation. Coincident centroids give infinity.
pub fn davies_bouldin(points: &[Vec<f64>], labels: &[usize]) -> Result<f64, ClusterError> {
    let (k, sizes, centroids) = groups(points, labels)?;
    let mut scatter = vec![0.0; k];
    for (p, &l) in points.iter().zip(labels) {
        scatter[l] += dist(p, &centroids[l]);
    }
    for (s, &n) in scatter.iter_mut().zip(&sizes) {
        *s /= n as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in 0..k {
            if i != j {
                let sep = dist(&centroids[i], &centroids[j]);
                let r = if sep > 0.0 { (scatter[i] + scatter[j]) / sep } else { f64::INFINITY };
                worst = worst.max(r);
            }
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Ratio of between- to within-cluster dispersion, each divided by its
/// degrees of freedom. Zero within-cluster dispersion gives 1.
pub fn calinski_harabasz(points: &[Vec<f64>], labels: &[usize]) -> Result<f64, ClusterError> {
    let (k, sizes, centroids) = groups(points, labels)?;
    let n = points.len();
    let d = points[0].len();
    let mut overall = vec![0.0; d];
    for p in points {
        for (o, v) in overall.iter_mut().zip(p) {
            *o += v / n as f64;
        }
    }
    let between: f64 = centroids.iter().zip(&sizes).map(|(c, &s)| s as f64 * sq_dist(c, &overall)).sum();
    let within: f64 = points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    if within == 0.0 || n == k {
        return Ok(1.0);
    }
    Ok(between * (n - k) as f64 / (within * (k - 1) as f64))
}

pub fn validity_metrics(points: &[Vec<f64>], labels: &[usize]) -> Result<ValidityReport, ClusterError> {
    let (_, sizes, _) = groups(points, labels)?;
    Ok(ValidityReport {
        silhouette: silhouette(points, labels)?,
        davies_bouldin: davies_bouldin(points, labels)?,
        calinski_harabasz: calinski_harabasz(points, labels)?,
        sizes,
    })
}
