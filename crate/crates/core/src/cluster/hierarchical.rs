use serde::{Deserialize, Serialize};

use crate::cluster::{check_points, sq_dist, ClusterError, ClusterResult, Method};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    /// Minimum increase in within-cluster variance.
    Ward,
    /// Mean pairwise Euclidean distance (UPGMA).
    Average,
}

/// One merge of the hierarchy. `a` and `b` are representative point indices
/// of the merged clusters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Ward: `sqrt(2·ΔESS)`, so that singletons merge at their Euclidean
    /// distance. Average: mean pairwise distance.
    pub height: f64,
    pub size: usize,
}

/// Merges in non-decreasing height order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl Dendrogram {
    /// Flat partition with `c` clusters.
    pub fn cut(&self, c: usize) -> Result<Vec<usize>, ClusterError> {
        if c == 0 || c > self.n {
            return Err(ClusterError::TooFewPoints { n: self.n, c });
        }
        let mut parent: Vec<usize> = (0..self.n).collect();
        for m in &self.merges[..self.n - c] {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            parent[ra.max(rb)] = ra.min(rb);
        }
        let roots: Vec<usize> = (0..self.n).map(|i| find(&mut parent, i)).collect();
        Ok(crate::cluster::canonical_labels(&roots))
    }
}

/// Builds the full hierarchy with the nearest-neighbour chain algorithm and
/// Lance–Williams updates (Ward on squared Euclidean distances, average on
/// Euclidean distances).
pub fn linkage(points: &[Vec<f64>], method: Linkage) -> Result<Dendrogram, ClusterError> {
    check_points(points, 1)?;
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(&points[i], &points[j]);
            let v = if method == Linkage::Average { v.sqrt() } else { v };
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    for _ in 1..n {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("two active clusters remain"));
        }
        let (a, b) = loop {
            let a = *chain.last().expect("non-empty chain");
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            let mut best = prev;
            let mut best_d = prev.map_or(f64::INFINITY, |p| d[a * n + p]);
            for x in 0..n {
                if active[x] && x != a && d[a * n + x] < best_d {
                    best = Some(x);
                    best_d = d[a * n + x];
                }
            }
            let b = best.expect("another active cluster");
            if Some(b) == prev {
                chain.truncate(chain.len() - 2);
                break (a.min(b), a.max(b));
            }
            chain.push(b);
        };
        let dab = d[a * n + b];
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (dka, dkb) = (d[k * n + a], d[k * n + b]);
            let v = match method {
                Linkage::Ward => {
                    let nk = size[k] as f64;
                    ((na + nk) * dka + (nb + nk) * dkb - nk * dab) / (na + nb + nk)
                }
                Linkage::Average => (na * dka + nb * dkb) / (na + nb),
            };
            d[k * n + a] = v;
            d[a * n + k] = v;
        }
        active[b] = false;
        size[a] += size[b];
        merges.push(Merge {
            a,
            b,
            height: if method == Linkage::Ward { dab.max(0.0).sqrt() } else { dab },
            size: size[a],
        });
    }
    merges.sort_by(|x, y| x.height.total_cmp(&y.height));
    Ok(Dendrogram { n, merges })
}

pub fn agglomerative_cluster(points: &[Vec<f64>], c: usize, method: Linkage) -> Result<ClusterResult, ClusterError> {
    check_points(points, c)?;
    let labels = linkage(points, method)?.cut(c)?;
    let tag = match method {
        Linkage::Ward => Method::Ward,
        Linkage::Average => Method::Average,
    };
    Ok(ClusterResult::new(tag, labels))
}
