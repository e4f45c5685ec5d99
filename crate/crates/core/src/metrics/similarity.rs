use alloc::vec;
use alloc::vec::Vec;

use crate::volume::{crop, BoundingBox, Volume};
use crate::{Error, Result};

/// Span of the `[-1, 1]` normalization.
pub const DATA_RANGE: f64 = 2.0;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

#[inline]
fn ssim_formula(mx: f64, my: f64, sxx: f64, syy: f64, sxy: f64) -> f64 {
    let c1 = (SSIM_K1 * DATA_RANGE) * (SSIM_K1 * DATA_RANGE);
    let c2 = (SSIM_K2 * DATA_RANGE) * (SSIM_K2 * DATA_RANGE);
    ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
}

/// Valid-mode separable filtering of a `rows x cols` plane with `taps`.
fn filter_valid(src: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (or, oc) = (rows + 1 - k, cols + 1 - k);
    let mut horiz = vec![0.0; rows * oc];
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for c in 0..oc {
            horiz[r * oc + c] = taps.iter().zip(&row[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = taps.iter().enumerate().map(|(i, t)| t * horiz[(r + i) * oc + c]).sum();
        }
    }
    out
}

/// Mean SSIM of two `rows x cols` planes.
///
/// Uses the 11x11 Gaussian window (sigma 1.5) at every fully contained
/// position. Planes narrower than the window in either axis are scored with a
/// single uniform window covering the whole plane.
pub fn ssim_2d(x: &[f64], y: &[f64], rows: usize, cols: usize) -> f64 {
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(y.len(), rows * cols);
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        let n = (rows * cols) as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let exx = x.iter().map(|v| v * v).sum::<f64>() / n;
        let eyy = y.iter().map(|v| v * v).sum::<f64>() / n;
        let exy = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
        return ssim_formula(mx, my, exx - mx * mx, eyy - my * my, exy - mx * my);
    }
    let taps = gaussian_taps();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, rows, cols, &taps);
    let my = filter_valid(y, rows, cols, &taps);
    let exx = filter_valid(&xx, rows, cols, &taps);
    let eyy = filter_valid(&yy, rows, cols, &taps);
    let exy = filter_valid(&xy, rows, cols, &taps);
    let n = mx.len();
    (0..n)
        .map(|i| {
            ssim_formula(mx[i], my[i], exx[i] - mx[i] * mx[i], eyy[i] - my[i] * my[i], exy[i] - mx[i] * my[i])
        })
        .sum::<f64>()
        / n as f64
}

fn crop_pair(test: &Volume, reference: &Volume, b: &BoundingBox) -> Result<(Volume, Volume)> {
    test.ensure_aligned(reference)?;
    if !b.fits(test.dims()) {
        return Err(Error::OutOfRange(alloc::format!("ROI {b:?} outside volume {:?}", test.dims())));
    }
    Ok((crop(test, b)?, crop(reference, b)?))
}

/// Slice-wise 2D SSIM over the box, averaged over its slices.
pub fn ssim_roi(test: &Volume, reference: &Volume, b: &BoundingBox) -> Result<f64> {
    let (t, r) = crop_pair(test, reference, b)?;
    let [nx, ny, nz] = t.dims();
    let to_f64 = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let total: f64 = (0..nz).map(|z| ssim_2d(&to_f64(t.slice(z)), &to_f64(r.slice(z)), ny, nx)).sum();
    Ok(total / nz as f64)
}

/// `20 log10(L / sqrt(MSE))` over the box with `L = 2`. Identical crops give
/// `f64::INFINITY`.
pub fn psnr_roi(test: &Volume, reference: &Volume, b: &BoundingBox) -> Result<f64> {
    let (t, r) = crop_pair(test, reference, b)?;
    let mse = t
        .data()
        .iter()
        .zip(r.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / t.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * libm::log10(DATA_RANGE / libm::sqrt(mse)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(dims: [usize; 3], v: f32) -> Volume {
        Volume::filled(dims, [1.0; 3], v, "normalized").unwrap()
    }

    #[test]
    fn identical_is_exactly_one() {
        let v = Volume::from_fn([20, 16, 3], [1.0; 3], "n", |x, y, z| ((x * 7 + y * 3 + z) % 11) as f32 / 5.5 - 1.0)
            .unwrap();
        let b = BoundingBox::full(v.dims());
        assert_eq!(ssim_roi(&v, &v, &b).unwrap(), 1.0);
        assert_eq!(psnr_roi(&v, &v, &b).unwrap(), f64::INFINITY);
    }

    #[test]
    fn constant_offset_closed_form() {
        // mu_ref = 0, mu_test = 0.5, all variances zero:
        // SSIM = C1 / (0.25 + C1) with C1 = (0.01 * 2)^2 = 4e-4.
        let expected = 4e-4 / (0.25 + 4e-4);
        for dims in [[16, 14, 2], [5, 4, 1]] {
            let r = constant(dims, 0.0);
            let t = constant(dims, 0.5);
            let s = ssim_roi(&t, &r, &BoundingBox::full(dims)).unwrap();
            assert!((s - expected).abs() < 1e-12, "{dims:?}: {s}");
        }
    }

    #[test]
    fn psnr_known_values() {
        let dims = [4, 4, 2];
        // error 0.5 everywhere: 20 log10(2 / 0.5) = 20 log10(4)
        let p = psnr_roi(&constant(dims, 0.5), &constant(dims, 0.0), &BoundingBox::full(dims)).unwrap();
        assert!((p - 12.041199826559248).abs() < 1e-9);
        // MSE = L^2 gives 0 dB
        let p = psnr_roi(&constant(dims, 1.0), &constant(dims, -1.0), &BoundingBox::full(dims)).unwrap();
        assert!(p.abs() < 1e-12);
    }

    #[test]
    fn taps_sum_to_one() {
        let t = gaussian_taps();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }

    #[test]
    fn roi_outside_volume_errors() {
        let v = constant([4, 4, 1], 0.0);
        let b = BoundingBox { min: [0, 0, 0], max: [4, 3, 0] };
        assert!(ssim_roi(&v, &v, &b).is_err());
    }
}
