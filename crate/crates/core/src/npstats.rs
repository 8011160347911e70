//! Rank tests: Kruskal–Wallis, Wilcoxon–Mann–Whitney, and Bonferroni.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::ingest::csv_write_err;
use crate::scalar::Scalar;

/// Both samples at most this size and no ties: exact MWU distribution.
pub const EXACT_MWU_MAX: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    NormalApprox,
    ChiSquared,
    /// Every pooled value identical; p is reported as 1.
    Degenerate,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::NormalApprox => "normal-approx",
            Method::ChiSquared => "chi-squared",
            Method::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult<T> {
    /// H for Kruskal–Wallis, U of the first sample for Mann–Whitney.
    pub statistic: T,
    pub df: Option<usize>,
    pub p: T,
    /// `1 - sum(t^3 - t) / (N^3 - N)`; 1 without ties.
    pub tie_correction: T,
    pub method: Method,
    /// MWU only: tie-corrected standard score without continuity correction.
    pub z: Option<T>,
}

/// Midranks (1-based) of `values`, plus the tie-group sizes.
pub fn midranks<T: Scalar>(values: &[T]) -> (Vec<T>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j share the mean of ranks i+1..=j.
        let r = T::of_usize(i + j + 1) / T::of(2.0);
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn tie_sum(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

fn check_finite<T: Scalar>(values: &[T]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("rank test input contains non-finite values".into()));
    }
    Ok(())
}

pub fn kruskal_wallis<T: Scalar>(values: &[T], groups: &Factor) -> Result<RankTestResult<T>> {
    if values.len() != groups.len() {
        return Err(Error::InvalidInput(format!(
            "{} values but factor `{}` covers {}",
            values.len(),
            groups.name,
            groups.len()
        )));
    }
    check_finite(values)?;
    let k = groups.levels_present();
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "Kruskal-Wallis on `{}` needs at least 2 nonempty groups",
            groups.name
        )));
    }
    let n = values.len() as f64;
    let (ranks, ties) = midranks(values);
    let mut sums = vec![0.0f64; groups.levels.len()];
    for (r, &c) in ranks.iter().zip(&groups.codes) {
        sums[c] += r.f64();
    }
    let h: f64 = groups
        .level_counts()
        .iter()
        .zip(&sums)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &s)| s * s / c as f64)
        .sum::<f64>()
        * 12.0
        / (n * (n + 1.0))
        - 3.0 * (n + 1.0);
    let tie_correction = 1.0 - tie_sum(&ties) / (n * n * n - n);
    let df = k - 1;
    if tie_correction <= 0.0 {
        return Ok(RankTestResult {
            statistic: T::zero(),
            df: Some(df),
            p: T::one(),
            tie_correction: T::zero(),
            method: Method::Degenerate,
            z: None,
        });
    }
    let h = (h / tie_correction).max(0.0);
    let p = ChiSquared::new(df as f64)
        .map_err(|e| Error::Numerical(e.to_string()))?
        .sf(h);
    Ok(RankTestResult {
        statistic: T::of(h),
        df: Some(df),
        p: T::of(p.clamp(0.0, 1.0)),
        tie_correction: T::of(tie_correction),
        method: Method::ChiSquared,
        z: None,
    })
}

/// Number of ways to place the first sample so that its U equals `u`, for
/// `u = 0..=m*n`, as floating-point counts.
pub fn mwu_null_counts(m: usize, n: usize) -> Vec<f64> {
    // dp[j][u]: placements of j first-sample items among the positions so far.
    let mut dp = vec![vec![0.0f64; m * n + 1]; m + 1];
    dp[0][0] = 1.0;
    for pos in 0..(m + n) {
        for j in (0..m.min(pos + 1)).rev() {
            let ys_before = pos - j;
            if ys_before > n {
                continue;
            }
            for u in (0..=(m * n - ys_before)).rev() {
                let c = dp[j][u];
                if c != 0.0 {
                    dp[j + 1][u + ys_before] += c;
                }
            }
        }
    }
    dp.swap_remove(m)
}

pub fn mann_whitney_u<T: Scalar>(x: &[T], y: &[T]) -> Result<RankTestResult<T>> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("Mann-Whitney needs two nonempty samples".into()));
    }
    check_finite(x)?;
    check_finite(y)?;
    let (m, n) = (x.len(), y.len());
    let pooled: Vec<T> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rx: f64 = ranks[..m].iter().map(|r| r.f64()).sum();
    let (mf, nf) = (m as f64, n as f64);
    let u = rx - mf * (mf + 1.0) / 2.0;
    let big_n = mf + nf;
    let tie_correction = if big_n > 1.0 {
        1.0 - tie_sum(&ties) / (big_n * big_n * big_n - big_n)
    } else {
        1.0
    };
    let mean = mf * nf / 2.0;
    let var = mf * nf / 12.0 * ((big_n + 1.0) - tie_sum(&ties) / (big_n * (big_n - 1.0)));
    let z = (var > 0.0).then(|| (u - mean) / var.sqrt());

    if var <= 0.0 {
        return Ok(RankTestResult {
            statistic: T::of(u),
            df: None,
            p: T::one(),
            tie_correction: T::of(tie_correction.max(0.0)),
            method: Method::Degenerate,
            z: None,
        });
    }

    let (p, method) = if m <= EXACT_MWU_MAX && n <= EXACT_MWU_MAX && ties.is_empty() {
        let counts = mwu_null_counts(m, n);
        let total: f64 = counts.iter().sum();
        // u is integral without ties.
        let ui = u.round() as usize;
        let lower: f64 = counts[..=ui].iter().sum::<f64>() / total;
        let upper: f64 = counts[ui..].iter().sum::<f64>() / total;
        ((2.0 * lower.min(upper)).min(1.0), Method::Exact)
    } else {
        let diff = u - mean;
        let correction = if diff > 0.0 {
            0.5
        } else if diff < 0.0 {
            -0.5
        } else {
            0.0
        };
        let zc = (diff - correction) / var.sqrt();
        let normal = Normal::standard();
        let p = 2.0 * normal.cdf(zc).min(normal.sf(zc));
        (p.min(1.0), Method::NormalApprox)
    };
    Ok(RankTestResult {
        statistic: T::of(u),
        df: None,
        p: T::of(p.clamp(0.0, 1.0)),
        tie_correction: T::of(tie_correction),
        method,
        z: z.map(T::of),
    })
}

/// `min(1, p * m)` for each entry.
pub fn bonferroni<T: Scalar>(p: &[T], m: usize) -> Vec<T> {
    let mf = T::of_usize(m);
    p.iter().map(|&x| (x * mf).min(T::one())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRankTest<T> {
    pub a: String,
    pub b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub result: RankTestResult<T>,
    pub p_adjusted: T,
}

/// Mann–Whitney for every pair of nonempty levels, `(1,0), (2,0), (2,1), ...`,
/// Bonferroni adjusted over the number of pairs.
pub fn pairwise_mann_whitney<T: Scalar>(values: &[T], groups: &Factor) -> Result<Vec<PairwiseRankTest<T>>> {
    if values.len() != groups.len() {
        return Err(Error::InvalidInput(format!(
            "{} values but factor `{}` covers {}",
            values.len(),
            groups.name,
            groups.len()
        )));
    }
    let members = groups.members();
    let present: Vec<usize> = (0..groups.levels.len()).filter(|&l| !members[l].is_empty()).collect();
    let pairs: Vec<(usize, usize)> = present
        .iter()
        .enumerate()
        .flat_map(|(bi, &b)| present[..bi].iter().map(move |&a| (b, a)))
        .collect();
    let results: Vec<RankTestResult<T>> = pairs
        .par_iter()
        .map(|&(b, a)| {
            let xs: Vec<T> = members[b].iter().map(|&i| values[i]).collect();
            let ys: Vec<T> = members[a].iter().map(|&i| values[i]).collect();
            mann_whitney_u(&xs, &ys)
        })
        .collect::<Result<_>>()?;
    let raw: Vec<T> = results.iter().map(|r| r.p).collect();
    let adjusted = bonferroni(&raw, pairs.len());
    Ok(pairs
        .into_iter()
        .zip(results)
        .zip(adjusted)
        .map(|(((b, a), result), p_adjusted)| PairwiseRankTest {
            a: groups.levels[b].clone(),
            b: groups.levels[a].clone(),
            n_a: members[b].len(),
            n_b: members[a].len(),
            result,
            p_adjusted,
        })
        .collect())
}

pub fn write_pairwise_csv<T: Scalar, W: Write>(tests: &[PairwiseRankTest<T>], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["level_a", "level_b", "n_a", "n_b", "U", "method", "p_raw", "p_bonferroni"])
        .map_err(csv_write_err)?;
    for t in tests {
        wtr.write_record([
            t.a.clone(),
            t.b.clone(),
            t.n_a.to_string(),
            t.n_b.to_string(),
            t.result.statistic.to_string(),
            t.result.method.tag().to_string(),
            t.result.p.to_string(),
            t.p_adjusted.to_string(),
        ])
        .map_err(csv_write_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factor(sizes: &[usize]) -> Factor {
        let codes: Vec<usize> = sizes.iter().enumerate().flat_map(|(g, &s)| std::iter::repeat_n(g, s)).collect();
        Factor::new("g", (0..sizes.len()).map(|g| format!("g{g}")).collect(), codes).unwrap()
    }

    #[test]
    fn kw_two_groups_no_ties() {
        let r = kruskal_wallis(&[1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], &factor(&[3, 3])).unwrap();
        assert!((r.statistic - 27.0 / 7.0).abs() < 1e-12);
        assert!((r.p - 0.049535).abs() < 1e-5);
        assert_eq!(r.df, Some(1));
        assert_eq!(r.tie_correction, 1.0);
    }

    #[test]
    fn kw_all_equal_is_degenerate() {
        let r = kruskal_wallis(&[2.0f64; 6], &factor(&[2, 4])).unwrap();
        assert_eq!(r.method, Method::Degenerate);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn midranks_with_ties() {
        let (r, t) = midranks(&[3.0, 1.0, 3.0, 2.0, 3.0]);
        assert_eq!(r, vec![4.0, 1.0, 4.0, 2.0, 4.0]);
        assert_eq!(t, vec![3]);
    }

    #[test]
    fn mwu_small_exact() {
        let r = mann_whitney_u(&[1.0f64, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.method, Method::Exact);
    }

    #[test]
    fn mwu_identical_samples() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let r = mann_whitney_u(&x, &x).unwrap();
        assert_eq!(r.statistic, 8.0);
        assert_eq!(r.p, 1.0);
        assert_eq!(r.method, Method::NormalApprox);
    }

    #[test]
    fn null_counts_sum_to_binomial() {
        let c = mwu_null_counts(3, 4);
        assert_eq!(c.len(), 13);
        assert_eq!(c.iter().sum::<f64>(), 35.0);
        // Symmetric about mn/2.
        for u in 0..=12 {
            assert_eq!(c[u], c[12 - u]);
        }
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni(&[0.01f64], 45)[0] - 0.45).abs() < 1e-15);
        assert_eq!(bonferroni(&[0.1f64], 45), vec![1.0]);
        assert_eq!(bonferroni(&[0.0f64, 0.0], 45), vec![0.0, 0.0]);
    }

    #[test]
    fn pairwise_sweep_covers_all_pairs() {
        let v: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let t = pairwise_mann_whitney(&v, &factor(&[4, 4, 4])).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!((t[0].a.as_str(), t[0].b.as_str()), ("g1", "g0"));
        for p in &t {
            assert_eq!(p.p_adjusted, (p.result.p * 3.0).min(1.0));
        }
    }
}
