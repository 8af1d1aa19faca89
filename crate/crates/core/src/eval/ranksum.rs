use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest combined sample size for which the p-value is enumerated exactly.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankSumResult {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled sample.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    ranks
}

/// Wilcoxon-Mann-Whitney rank-sum test.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> Result<RankSumResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("rank-sum samples must be nonempty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::param("rank-sum samples must be finite"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let (na, nb) = (a.len(), b.len());
    let shift = (na * (na + 1)) as f64 / 2.0;
    let u = ranks[..na].iter().sum::<f64>() - shift;
    let mu = (na * nb) as f64 / 2.0;
    let observed = (u - mu).abs();

    if na + nb <= EXACT_LIMIT {
        let n = na + nb;
        let (mut extreme, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != na {
                continue;
            }
            let r: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            total += 1;
            if ((r - shift) - mu).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        }
        return Ok(RankSumResult {
            u,
            p_value: extreme as f64 / total as f64,
            exact: true,
        });
    }

    let n = (na + nb) as f64;
    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    for run in sorted.chunk_by(|x, y| x == y) {
        let t = run.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (observed - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (2.0 * normal.sf(z)).min(1.0)
    };
    Ok(RankSumResult {
        u,
        p_value,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_samples() {
        let r = rank_sum_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert!((r.p_value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_identical() {
        let a = [0.3, 0.1, 0.7, 0.2];
        let b = [0.5, 0.9, 0.4];
        let ab = rank_sum_test(&a, &b).unwrap();
        let ba = rank_sum_test(&b, &a).unwrap();
        assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        assert!(rank_sum_test(&a, &a).unwrap().p_value >= 0.99);
        let big: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        assert!(rank_sum_test(&big, &big).unwrap().p_value >= 0.99);
    }

    #[test]
    fn midrank_ties() {
        assert_eq!(midranks(&[2.0, 1.0, 2.0, 3.0]), vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn normal_approximation_reference() {
        // scipy.stats.mannwhitneyu(range(10), range(5, 15), method="asymptotic")
        // -> U=12.5, p=0.0050753923...
        let a: Vec<f64> = (0..10).map(f64::from).collect();
        let b: Vec<f64> = (5..15).map(f64::from).collect();
        let r = rank_sum_test(&a, &b).unwrap();
        assert!(!r.exact);
        assert_eq!(r.u, 12.5);
        assert!((r.p_value - 0.005_075_392_3).abs() < 1e-9, "{}", r.p_value);
    }

    #[test]
    fn constant_pool() {
        let r = rank_sum_test(&[1.0; 8], &[1.0; 9]).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn empty_errors() {
        assert!(rank_sum_test(&[], &[1.0]).is_err());
    }
}
