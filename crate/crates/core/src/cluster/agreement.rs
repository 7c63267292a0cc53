use std::collections::BTreeMap;

use crate::cluster::canonical_labels;

fn contingency(a: &[usize], b: &[usize]) -> (BTreeMap<(usize, usize), usize>, BTreeMap<usize, usize>, BTreeMap<usize, usize>) {
    let mut joint = BTreeMap::new();
    let mut ra = BTreeMap::new();
    let mut rb = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
        *ra.entry(x).or_insert(0) += 1;
        *rb.entry(y).or_insert(0) += 1;
    }
    (joint, ra, rb)
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    canonical_labels(a) == canonical_labels(b)
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index. Identical partitions score exactly 1, including the
/// degenerate all-in-one and all-singleton cases.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions of different sizes");
    if same_partition(a, b) {
        return 1.0;
    }
    let (joint, ra, rb) = contingency(a, b);
    let index: f64 = joint.values().map(|&v| choose2(v)).sum();
    let sa: f64 = ra.values().map(|&v| choose2(v)).sum();
    let sb: f64 = rb.values().map(|&v| choose2(v)).sum();
    let total = choose2(a.len());
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 0.0;
    }
    (index - expected) / (max - expected)
}

fn entropy(counts: &BTreeMap<usize, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two
/// entropies. Identical partitions score exactly 1.
pub fn normalized_mutual_info(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions of different sizes");
    if same_partition(a, b) {
        return 1.0;
    }
    let n = a.len() as f64;
    let (joint, ra, rb) = contingency(a, b);
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c as f64 / n;
        let px = ra[&x] as f64 / n;
        let py = rb[&y] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    let denom = 0.5 * (entropy(&ra, n) + entropy(&rb, n));
    if denom <= 0.0 {
        return 0.0;
    }
    (mi / denom).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_invariant_and_exact_for_equal_partitions() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = [2, 2, 0, 0, 1, 1];
        assert_eq!(adjusted_rand_index(&a, &b), 1.0);
        assert_eq!(normalized_mutual_info(&a, &b), 1.0);
        let c = [0, 1, 0, 1, 2, 2];
        assert!(adjusted_rand_index(&a, &c) < 1.0);
        assert_eq!(adjusted_rand_index(&a, &c), adjusted_rand_index(&b, &c));
    }

    #[test]
    fn known_value() {
        let a = [0, 0, 0, 1, 1, 1];
        let b = [0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &b) - 0.24242424242424243).abs() < 1e-12);
    }
}
