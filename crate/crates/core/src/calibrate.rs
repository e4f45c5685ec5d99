//! Histogram-based intensity calibration of T1ce onto the T1 window.
//!
//! Both histograms are assumed to share a shape up to translation and scaling.
//! The first retained peak is the zero background and the second the dominant
//! tissue; the affine map sending the T1ce pair of peaks onto the T1 pair is
//! the calibration.

use alloc::vec;
use alloc::vec::Vec;

use crate::volume::Volume;
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 256;
pub const DEFAULT_SMOOTH_RADIUS: usize = 2;
/// Peaks lower than this fraction of the tallest smoothed bin are dropped.
pub const PEAK_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn from_counts(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 || edges.len() != counts.len() + 1 {
            return Err(Error::InvalidShape(alloc::format!(
                "{} edges for {} counts",
                edges.len(),
                counts.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidShape("histogram edges must be strictly increasing".into()));
        }
        let total = counts.iter().sum();
        Ok(Histogram { edges, counts, total })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    pub fn bin_width(&self) -> f64 {
        (self.edges[self.edges.len() - 1] - self.edges[0]) / self.n_bins() as f64
    }

    /// Index of the tallest bin (leftmost on ties).
    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

/// Equal-width histogram over `[min(v), max(v)]`; the maximum lands in the last bin.
pub fn compute_histogram(v: &Volume, n_bins: usize) -> Result<Histogram> {
    let (lo, hi) = v.min_max();
    if !(lo < hi) {
        return Err(Error::DegenerateHistogram);
    }
    compute_histogram_range(v, n_bins, lo as f64, hi as f64)
}

/// Equal-width histogram over an explicit `[lo, hi]`; values outside are clamped
/// into the end bins.
pub fn compute_histogram_range(v: &Volume, n_bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::Config(alloc::format!("n_bins must be >= 2, got {n_bins}")));
    }
    if !(lo < hi) {
        return Err(Error::DegenerateHistogram);
    }
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    edges[n_bins] = hi;
    let mut counts = vec![0u64; n_bins];
    let scale = n_bins as f64 / (hi - lo);
    for &x in v.data() {
        let pos = (x as f64 - lo) * scale;
        let bin = if pos <= 0.0 { 0 } else { (libm::floor(pos) as usize).min(n_bins - 1) };
        counts[bin] += 1;
    }
    Histogram::from_counts(edges, counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub bin: usize,
    pub center: f64,
    /// Smoothed count at the peak.
    pub height: f64,
}

/// Moving-average smoothed counts as exact fractions `(sum, window_len)`.
fn smoothed_fractions(counts: &[u64], radius: usize) -> Vec<(u64, u64)> {
    let n = counts.len();
    let mut prefix = vec![0u64; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + counts[i];
    }
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(radius);
            let b = (i + radius + 1).min(n);
            (prefix[b] - prefix[a], (b - a) as u64)
        })
        .collect()
}

#[inline]
fn cmp_frac(a: (u64, u64), b: (u64, u64)) -> core::cmp::Ordering {
    (a.0 as u128 * b.1 as u128).cmp(&(b.0 as u128 * a.1 as u128))
}

/// Local maxima of the smoothed histogram, ascending by bin.
///
/// Smoothing is a moving average of width `2 * smooth_radius + 1` with
/// truncated windows at the ends. A plateau counts as one peak reported at its
/// leftmost bin. Comparisons are done on exact fractions so mirrored inputs
/// give mirrored peaks.
pub fn find_peaks(h: &Histogram, smooth_radius: usize) -> Vec<Peak> {
    use core::cmp::Ordering::*;
    let s = smoothed_fractions(h.counts(), smooth_radius);
    let n = s.len();
    let global = s.iter().copied().max_by(|a, b| cmp_frac(*a, *b)).unwrap_or((0, 1));
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && cmp_frac(s[j + 1], s[i]) == Equal {
            j += 1;
        }
        let left_lower = i == 0 || cmp_frac(s[i - 1], s[i]) == Less;
        let right_lower = j + 1 == n || cmp_frac(s[j + 1], s[i]) == Less;
        // height * 100 < global  <=>  below the 1% floor
        let (num, den) = s[i];
        let below_floor = (num as u128 * 100 * global.1 as u128) < (global.0 as u128 * den as u128);
        if left_lower && right_lower && !below_floor && num > 0 {
            peaks.push(Peak { bin: i, center: h.bin_center(i), height: num as f64 / den as f64 });
        }
        i = j + 1;
    }
    peaks
}

/// `x -> scale * x + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineIntensityMap {
    scale: f64,
    offset: f64,
}

impl AffineIntensityMap {
    pub const IDENTITY: AffineIntensityMap = AffineIntensityMap { scale: 1.0, offset: 0.0 };

    pub fn new(scale: f64, offset: f64) -> Result<Self> {
        if !(scale.is_finite() && offset.is_finite() && scale > 0.0) {
            return Err(Error::Config(alloc::format!(
                "calibration needs finite scale > 0 and finite offset, got {scale}, {offset}"
            )));
        }
        Ok(AffineIntensityMap { scale, offset })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    #[inline]
    pub fn apply_to(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    pub fn inverse(&self) -> AffineIntensityMap {
        AffineIntensityMap { scale: 1.0 / self.scale, offset: -self.offset / self.scale }
    }
}

/// Peaks and the resulting map, kept together for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub map: AffineIntensityMap,
    /// Background and tissue peak centers of T1.
    pub t1_anchors: (f64, f64),
    /// Background and tissue peak centers of T1ce.
    pub t1ce_anchors: (f64, f64),
    pub t1_hist: Histogram,
    pub t1ce_hist: Histogram,
}

fn anchors(v: &Volume, n_bins: usize, smooth_radius: usize) -> Result<((f64, f64), Histogram)> {
    let h = compute_histogram(v, n_bins)?;
    let peaks = find_peaks(&h, smooth_radius);
    if peaks.len() < 2 {
        return Err(Error::TooFewPeaks { found: peaks.len() });
    }
    let (b, p) = (peaks[0].center, peaks[1].center);
    if !(p > b) {
        return Err(Error::PeakOrdering);
    }
    Ok(((b, p), h))
}

pub fn estimate_calibration(
    t1: &Volume,
    t1ce: &Volume,
    n_bins: usize,
    smooth_radius: usize,
) -> Result<AffineIntensityMap> {
    Ok(calibrate_detailed(t1, t1ce, n_bins, smooth_radius)?.map)
}

/// As [`estimate_calibration`], also returning the anchors and histograms.
pub fn calibrate_detailed(
    t1: &Volume,
    t1ce: &Volume,
    n_bins: usize,
    smooth_radius: usize,
) -> Result<Calibration> {
    let ((b1, p1), t1_hist) = anchors(t1, n_bins, smooth_radius)?;
    let ((bc, pc), t1ce_hist) = anchors(t1ce, n_bins, smooth_radius)?;
    let scale = (p1 - b1) / (pc - bc);
    let offset = b1 - scale * bc;
    Ok(Calibration {
        map: AffineIntensityMap::new(scale, offset)?,
        t1_anchors: (b1, p1),
        t1ce_anchors: (bc, pc),
        t1_hist,
        t1ce_hist,
    })
}

pub fn apply_calibration(v: &Volume, m: &AffineIntensityMap) -> Result<Volume> {
    v.map(|x| m.apply_to(x as f64) as f32)
}
