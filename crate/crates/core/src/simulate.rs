//! Reduced-dose simulation and `[-1, 1]` normalization.
//!
//! Signal intensity on short-TR T1 imaging is roughly linear in contrast agent
//! concentration, so a scan at `beta` percent of the standard dose is modeled
//! as `(1 - beta/100) * T1 + (beta/100) * T1ce_calibrated`.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::phantom::gaussian;
use crate::volume::{Volume, NORMALIZED_UNIT};
use crate::{Error, Result};

/// Dose as an integer percent of the standard dose, `0..=100`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DoseFraction(u8);

impl DoseFraction {
    pub const ZERO: DoseFraction = DoseFraction(0);
    pub const STANDARD: DoseFraction = DoseFraction(100);

    pub fn new(percent: u32) -> Result<Self> {
        if percent > 100 {
            return Err(Error::Config(format!("dose percent must be in 0..=100, got {percent}")));
        }
        Ok(DoseFraction(percent as u8))
    }

    pub fn percent(self) -> u32 {
        self.0 as u32
    }

    pub fn fraction(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl core::fmt::Display for DoseFraction {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Zero dose (T1 only) plus 10% .. 90% in steps of 10.
pub fn dose_grid() -> Vec<DoseFraction> {
    (0..10).map(|i| DoseFraction(i * 10)).collect()
}

pub fn simulate_low_dose(t1: &Volume, t1ce_cal: &Volume, beta: DoseFraction) -> Result<Volume> {
    t1.ensure_aligned(t1ce_cal)?;
    // Endpoints are returned untouched so they are bit-exact (including -0.0).
    match beta.percent() {
        0 => return Ok(t1.clone()),
        100 => return Ok(t1ce_cal.clone()),
        _ => {}
    }
    let b = beta.fraction();
    let data = t1
        .data()
        .iter()
        .zip(t1ce_cal.data())
        .map(|(&pre, &post)| ((1.0 - b) * pre as f64 + b * post as f64) as f32)
        .collect();
    t1.with_data(data, t1.unit())
}

/// [`simulate_low_dose`] followed by additive Gaussian noise of standard
/// deviation `sigma`. Off by default in the pipeline.
pub fn simulate_low_dose_noisy(
    t1: &Volume,
    t1ce_cal: &Volume,
    beta: DoseFraction,
    sigma: f64,
    seed: u64,
) -> Result<Volume> {
    let clean = simulate_low_dose(t1, t1ce_cal, beta)?;
    if sigma == 0.0 {
        return Ok(clean);
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(beta.percent() as u64);
    clean.map(|v| (v as f64 + sigma * gaussian(&mut rng)) as f32)
}

/// Original intensity bounds of a normalized volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitRange {
    pub lo: f64,
    pub hi: f64,
}

/// Linear map sending `min(v)` to -1 and `max(v)` to +1.
pub fn normalize_unit_range(v: &Volume) -> Result<(Volume, UnitRange)> {
    let (lo, hi) = v.min_max();
    if !(lo < hi) {
        return Err(Error::ConstantVolume);
    }
    let (lo, hi) = (lo as f64, hi as f64);
    let span = hi - lo;
    let data = v.data().iter().map(|&x| ((x as f64 - lo) / span * 2.0 - 1.0) as f32).collect();
    Ok((v.with_data(data, NORMALIZED_UNIT)?, UnitRange { lo, hi }))
}

pub fn denormalize(v: &Volume, range: UnitRange, unit: &str) -> Result<Volume> {
    let span = range.hi - range.lo;
    let data = v.data().iter().map(|&y| ((y as f64 + 1.0) * 0.5 * span + range.lo) as f32).collect();
    v.with_data(data, unit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(values: &[f32]) -> Volume {
        Volume::new([values.len(), 1, 1], [1.0; 3], values.to_vec(), "au").unwrap()
    }

    #[test]
    fn grid_is_zero_to_ninety() {
        let g: Vec<u32> = dose_grid().iter().map(|d| d.percent()).collect();
        assert_eq!(g, [0, 10, 20, 30, 40, 50, 60, 70, 80, 90]);
        assert!(g.windows(2).all(|w| w[1] == w[0] + 10));
    }

    #[test]
    fn endpoints_and_midpoint() {
        let t1 = vol(&[0.2, -0.0, 5.0]);
        let ce = vol(&[0.8, 1.0, 7.0]);
        assert_eq!(simulate_low_dose(&t1, &ce, DoseFraction::ZERO).unwrap(), t1);
        assert_eq!(simulate_low_dose(&t1, &ce, DoseFraction::STANDARD).unwrap(), ce);
        let mid = simulate_low_dose(&t1, &ce, DoseFraction::new(50).unwrap()).unwrap();
        assert!((mid.data()[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn mismatched_geometry_is_rejected() {
        let a = vol(&[0.0, 1.0]);
        let b = vol(&[0.0, 1.0, 2.0]);
        assert!(matches!(simulate_low_dose(&a, &b, DoseFraction::new(10).unwrap()), Err(Error::Mismatch(_))));
        assert!(DoseFraction::new(101).is_err());
    }

    #[test]
    fn normalize_hits_exact_bounds() {
        let (n, r) = normalize_unit_range(&vol(&[0.0, 10.0, 2.5])).unwrap();
        assert_eq!(n.data(), &[-1.0, 1.0, -0.5]);
        assert_eq!(n.unit(), NORMALIZED_UNIT);
        assert_eq!(r, UnitRange { lo: 0.0, hi: 10.0 });
        let (same, _) = normalize_unit_range(&vol(&[-1.0, 0.0, 1.0])).unwrap();
        assert_eq!(same.data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(normalize_unit_range(&vol(&[3.0, 3.0])).unwrap_err(), Error::ConstantVolume);
    }

    #[test]
    fn denormalize_inverts() {
        let v = vol(&[-12.5, 3.25, 100.0, 7.0]);
        let (n, r) = normalize_unit_range(&v).unwrap();
        let back = denormalize(&n, r, "au").unwrap();
        for (a, b) in back.data().iter().zip(v.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn noise_flag_defaults_to_clean() {
        let t1 = vol(&[0.0, 1.0]);
        let ce = vol(&[1.0, 2.0]);
        let b = DoseFraction::new(30).unwrap();
        assert_eq!(
            simulate_low_dose_noisy(&t1, &ce, b, 0.0, 1).unwrap(),
            simulate_low_dose(&t1, &ce, b).unwrap()
        );
        let noisy = simulate_low_dose_noisy(&t1, &ce, b, 0.1, 1).unwrap();
        assert_ne!(noisy.data(), simulate_low_dose(&t1, &ce, b).unwrap().data());
        assert_eq!(noisy, simulate_low_dose_noisy(&t1, &ce, b, 0.1, 1).unwrap());
    }
}
