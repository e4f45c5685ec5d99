//! Wilcoxon signed-rank test and the per-dose significance table.
//!
//! Zero differences are dropped before ranking and tied absolute differences
//! share their average rank. Up to [`EXACT_MAX_N`] non-zero pairs the two-sided
//! p-value comes from the exact null distribution of the signed-rank sum
//! (enumerated by dynamic programming over doubled ranks, so ties stay exact);
//! beyond that a tie-corrected normal approximation with continuity
//! correction is used.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::metrics::{Arm, EvalRecord, Region};
use crate::{Error, Result};

pub const EXACT_MAX_N: usize = 25;
pub const SIGNIFICANCE_LEVEL: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    NormalApprox,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::NormalApprox => "normal_approx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    pub n_effective: usize,
    /// `min(W+, W-)`.
    pub w_statistic: f64,
    pub p_two_sided: f64,
    pub method: Method,
}

/// Average ranks of `|d|`, doubled so that they are integers.
/// `abs` must be sorted ascending.
fn doubled_ranks(abs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let n = abs.len();
    let mut ranks = vec![0u64; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && abs[j + 1] == abs[i] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, times two
        let r2 = (i + j + 2) as u64;
        ranks[i..=j].iter_mut().for_each(|r| *r = r2);
        if j > i {
            tie_sizes.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, tie_sizes)
}

/// Number of sign assignments giving each doubled positive-rank sum.
fn null_counts(ranks: &[u64]) -> Vec<u64> {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    counts
}

pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidSample(alloc::format!("paired lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::InvalidSample("need at least one pair".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidSample("NaN in paired samples".into()));
    }
    let mut diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult { n_effective: 0, w_statistic: 0.0, p_two_sided: 1.0, method: Method::Exact });
    }
    diffs.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let total2: u64 = ranks.iter().sum();
    let plus2: u64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w2 = plus2.min(total2 - plus2);
    let w_statistic = w2 as f64 / 2.0;

    if n <= EXACT_MAX_N {
        let counts = null_counts(&ranks);
        let tail: u64 = counts[..=w2 as usize].iter().sum();
        let p = (2.0 * tail as f64 / libm::ldexp(1.0, n as i32)).min(1.0);
        return Ok(WilcoxonResult { n_effective: n, w_statistic, p_two_sided: p, method: Method::Exact });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = ((mean - w_statistic).abs() - 0.5).max(0.0) / libm::sqrt(var);
    let p = libm::erfc(z / core::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(WilcoxonResult { n_effective: n, w_statistic, p_two_sided: p, method: Method::NormalApprox })
}

/// Metric columns of `metrics.csv`, in order.
pub const METRIC_NAMES: [&str; 11] = [
    "ssim",
    "psnr_db",
    "dice_intra",
    "dice_extra",
    "dice_whole",
    "hd95_intra",
    "hd95_extra",
    "hd95_whole",
    "asd_intra",
    "asd_extra",
    "asd_whole",
];

/// Value of a named metric; `None` for undefined or infinite entries.
pub fn metric_value(r: &EvalRecord, metric: &str) -> Option<f64> {
    let region = |suffix: &str| Region::ALL.iter().position(|g| g.suffix() == suffix);
    let v = match metric {
        "ssim" => Some(r.ssim),
        "psnr_db" => Some(r.psnr_db),
        m => {
            let (kind, suffix) = m.split_once('_')?;
            let i = region(suffix)?;
            match kind {
                "dice" => Some(r.dice[i]),
                "hd95" => r.hd95_mm[i],
                "asd" => r.asd_mm[i],
                _ => None,
            }
        }
    };
    v.filter(|x| x.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceRow {
    pub metric: String,
    pub beta_percent: u32,
    pub result: WilcoxonResult,
    pub star: bool,
}

/// Low-dose vs restored Wilcoxon test for every (metric, dose) cell.
///
/// Pairs are matched on study id. Studies missing either arm, or whose value
/// is undefined or infinite in either arm, are left out of that cell.
pub fn significance_table(records: &[EvalRecord]) -> Vec<SignificanceRow> {
    let mut cells: BTreeMap<u32, BTreeMap<&str, [Option<&EvalRecord>; 2]>> = BTreeMap::new();
    for r in records {
        let slot = cells.entry(r.beta_percent).or_default().entry(r.study_id.as_str()).or_default();
        slot[(r.arm == Arm::Restored) as usize] = Some(r);
    }
    let mut rows = Vec::new();
    for (&beta, studies) in &cells {
        for metric in METRIC_NAMES {
            let (mut low, mut restored) = (Vec::new(), Vec::new());
            for pair in studies.values() {
                if let [Some(a), Some(b)] = pair {
                    if let (Some(va), Some(vb)) = (metric_value(a, metric), metric_value(b, metric)) {
                        low.push(va);
                        restored.push(vb);
                    }
                }
            }
            let result = if low.is_empty() {
                WilcoxonResult { n_effective: 0, w_statistic: 0.0, p_two_sided: 1.0, method: Method::Exact }
            } else {
                wilcoxon_signed_rank(&restored, &low).expect("finite paired samples of equal length")
            };
            rows.push(SignificanceRow {
                metric: metric.into(),
                beta_percent: beta,
                star: result.p_two_sided < SIGNIFICANCE_LEVEL,
                result,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_five() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
        assert_eq!(r.w_statistic, 0.0);
        assert_eq!(r.p_two_sided, 0.0625);
        assert_eq!(r.method, Method::Exact);
    }

    #[test]
    fn identical_samples() {
        let x = [0.3, 0.5, 0.9];
        let r = wilcoxon_signed_rank(&x, &x).unwrap();
        assert_eq!((r.n_effective, r.p_two_sided, r.method), (0, 1.0, Method::Exact));
    }

    #[test]
    fn tied_ranks_are_averaged() {
        let (r, t) = doubled_ranks(&[1.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(r, [3, 3, 6, 8, 10, 12]);
        assert_eq!(t, [2]);
        let d = [1.0, 2.0, 3.0, 4.0, 5.0, -1.0];
        let res = wilcoxon_signed_rank(&d, &[0.0; 6]).unwrap();
        assert_eq!(res.w_statistic, 1.5);
    }

    #[test]
    fn errors() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
        assert!(wilcoxon_signed_rank(&[], &[]).is_err());
        assert!(wilcoxon_signed_rank(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn large_n_uses_normal_approximation() {
        let x: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let r = wilcoxon_signed_rank(&x, &[0.0; 40]).unwrap();
        assert_eq!(r.method, Method::NormalApprox);
        assert!(r.p_two_sided > 0.0 && r.p_two_sided < 1e-6);
        // balanced signs: W sits at its mean
        let y: Vec<f64> = (1..=40).map(|i| if i % 4 == 1 || i % 4 == 0 { i as f64 } else { -(i as f64) }).collect();
        let r = wilcoxon_signed_rank(&y, &[0.0; 40]).unwrap();
        assert!(r.p_two_sided > 0.9);
    }

    #[test]
    fn null_distribution_counts() {
        // ranks 1,2,3 doubled: sums of subsets of {2,4,6}
        assert_eq!(null_counts(&[2, 4, 6]), [1, 0, 1, 0, 1, 0, 2, 0, 1, 0, 1, 0, 1]);
    }
}
