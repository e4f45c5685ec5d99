//! Whole-volume restoration with overlapping patches.
//!
//! Each axial slice is covered by patches on a half-patch stride (the last
//! origin is clamped to the slice edge), every patch prediction is weighted by
//! a separable Gaussian and the weighted sum is divided by the summed weights.
//! Slices smaller than the patch are reflect-padded first.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::{CoordGrid, Plane, Stack};
use crate::volume::Volume;
use crate::{Error, Result};

pub const DEFAULT_SIGMA_FRAC: f64 = 0.125;
/// Minimum window weight relative to its maximum.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Anything that maps an input patch to a same-sized prediction.
pub trait PatchModel {
    /// Number of input channels the model expects.
    fn channels(&self) -> usize;
    fn predict(&self, input: &Stack, coords: &CoordGrid) -> Result<Plane>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub patch_hw: (usize, usize),
    pub stride_hw: (usize, usize),
    pub row_origins: Vec<usize>,
    pub col_origins: Vec<usize>,
    /// `(before, after)` reflect padding per axis, rows then columns.
    pub pad: [(usize, usize); 2],
    pub slice_hw: (usize, usize),
}

impl WindowPlan {
    pub fn padded_hw(&self) -> (usize, usize) {
        (
            self.slice_hw.0 + self.pad[0].0 + self.pad[0].1,
            self.slice_hw.1 + self.pad[1].0 + self.pad[1].1,
        )
    }

    /// All `(row, col)` origins in row-major order.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        self.row_origins
            .iter()
            .flat_map(|&r| self.col_origins.iter().map(move |&c| (r, c)))
            .collect()
    }
}

fn axis_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        if o + patch >= len {
            out.push(len - patch);
            return out;
        }
        out.push(o);
        o += stride;
    }
}

pub fn plan_windows(slice_hw: (usize, usize), patch_hw: (usize, usize)) -> Result<WindowPlan> {
    let (ph, pw) = patch_hw;
    if ph < 2 || pw < 2 || ph % 2 != 0 || pw % 2 != 0 {
        return Err(Error::Config(alloc::format!("patch {ph}x{pw} must be even and at least 2x2")));
    }
    if slice_hw.0 == 0 || slice_hw.1 == 0 {
        return Err(Error::InvalidShape("empty slice".into()));
    }
    let pad_axis = |n: usize, p: usize| {
        let total = p.saturating_sub(n);
        (total / 2, total - total / 2)
    };
    let pad = [pad_axis(slice_hw.0, ph), pad_axis(slice_hw.1, pw)];
    let stride_hw = (ph / 2, pw / 2);
    let rows = slice_hw.0.max(ph);
    let cols = slice_hw.1.max(pw);
    Ok(WindowPlan {
        patch_hw,
        stride_hw,
        row_origins: axis_origins(rows, ph, stride_hw.0),
        col_origins: axis_origins(cols, pw, stride_hw.1),
        pad,
        slice_hw,
    })
}

fn gaussian_axis(len: usize, sigma_frac: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let s = sigma_frac * len as f64;
    (0..len)
        .map(|i| {
            let d = i as f64 - c;
            libm::exp(-d * d / (2.0 * s * s))
        })
        .collect()
}

pub fn gaussian_window(patch_hw: (usize, usize), sigma_frac: f64) -> Result<Plane> {
    if !(sigma_frac > 0.0 && sigma_frac.is_finite()) {
        return Err(Error::Config(alloc::format!("sigma fraction must be positive, got {sigma_frac}")));
    }
    let wr = gaussian_axis(patch_hw.0, sigma_frac);
    let wc = gaussian_axis(patch_hw.1, sigma_frac);
    let mut w = Plane::from_fn(patch_hw.0, patch_hw.1, |r, c| wr[r] * wc[c]);
    let max = w.data().iter().cloned().fold(0.0, f64::max);
    let floor = WEIGHT_FLOOR * max;
    w.data_mut().iter_mut().for_each(|v| *v = v.max(floor));
    Ok(w)
}

/// Mirror index without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

pub fn reflect_pad(p: &Plane, pad: [(usize, usize); 2]) -> Plane {
    let rows = p.rows() + pad[0].0 + pad[0].1;
    let cols = p.cols() + pad[1].0 + pad[1].1;
    Plane::from_fn(rows, cols, |r, c| {
        p.get(
            reflect(r as isize - pad[0].0 as isize, p.rows()),
            reflect(c as isize - pad[1].0 as isize, p.cols()),
        )
    })
}

/// Restores one slice given its channel planes, visiting `origins` in the
/// given order.
pub fn restore_plane_with_origins<M: PatchModel + ?Sized>(
    model: &M,
    channels: &[Plane],
    plan: &WindowPlan,
    window: &Plane,
    origins: &[(usize, usize)],
) -> Result<Plane> {
    let padded: Vec<Plane> = channels.iter().map(|c| reflect_pad(c, plan.pad)).collect();
    let (rows, cols) = plan.padded_hw();
    let (ph, pw) = plan.patch_hw;
    let coords = CoordGrid::regular(ph, pw);
    let mut acc = vec![0.0f64; rows * cols];
    let mut wsum = vec![0.0f64; rows * cols];
    for &(r0, c0) in origins {
        let patch: Vec<Plane> = padded.iter().map(|p| p.window(r0, c0, ph, pw)).collect();
        let pred = model.predict(&Stack::from_planes(&patch)?, &coords)?;
        if pred.shape() != (ph, pw) {
            return Err(Error::Mismatch(alloc::format!("model returned {:?} for a {ph}x{pw} patch", pred.shape())));
        }
        for r in 0..ph {
            for c in 0..pw {
                let w = window.get(r, c);
                let i = (r0 + r) * cols + c0 + c;
                acc[i] += w * pred.get(r, c);
                wsum[i] += w;
            }
        }
    }
    let (sr, sc) = plan.slice_hw;
    Ok(Plane::from_fn(sr, sc, |r, c| {
        let i = (r + plan.pad[0].0) * cols + c + plan.pad[1].0;
        acc[i] / wsum[i]
    }))
}

pub fn restore_plane<M: PatchModel + ?Sized>(
    model: &M,
    channels: &[Plane],
    patch_hw: (usize, usize),
    sigma_frac: f64,
) -> Result<Plane> {
    let first = channels.first().ok_or_else(|| Error::InvalidShape("no input channels".into()))?;
    let plan = plan_windows(first.shape(), patch_hw)?;
    let window = gaussian_window(patch_hw, sigma_frac)?;
    restore_plane_with_origins(model, channels, &plan, &window, &plan.origins())
}

fn slice_plane(v: &Volume, z: usize) -> Plane {
    let [nx, ny, _] = v.dims();
    Plane::from_fn(ny, nx, |r, c| v.slice(z)[r * nx + c] as f64)
}

/// Input planes for slice `z`: the low-dose slice, then the auxiliary T1
/// slice when given.
pub fn slice_channels(low: &Volume, aux: Option<&Volume>, z: usize) -> Vec<Plane> {
    let mut out = vec![slice_plane(low, z)];
    if let Some(a) = aux {
        out.push(slice_plane(a, z));
    }
    out
}

pub fn check_channels<M: PatchModel + ?Sized>(model: &M, low: &Volume, aux: Option<&Volume>) -> Result<()> {
    if let Some(a) = aux {
        low.ensure_aligned(a)?;
    }
    let given = 1 + aux.is_some() as usize;
    if model.channels() != given {
        return Err(Error::Mismatch(alloc::format!(
            "model expects {} input channel(s), got {given}",
            model.channels()
        )));
    }
    Ok(())
}

/// Restores every axial slice of `low`. The result has the geometry of `low`.
pub fn restore_volume<M: PatchModel + ?Sized>(
    model: &M,
    low: &Volume,
    aux: Option<&Volume>,
    patch_hw: (usize, usize),
    sigma_frac: f64,
) -> Result<Volume> {
    check_channels(model, low, aux)?;
    let [nx, ny, nz] = low.dims();
    let plan = plan_windows((ny, nx), patch_hw)?;
    let window = gaussian_window(patch_hw, sigma_frac)?;
    let origins = plan.origins();
    let mut data = Vec::with_capacity(low.len());
    for z in 0..nz {
        let out = restore_plane_with_origins(model, &slice_channels(low, aux, z), &plan, &window, &origins)?;
        data.extend(out.data().iter().map(|&v| v as f32));
    }
    low.with_data(data, low.unit())
}
