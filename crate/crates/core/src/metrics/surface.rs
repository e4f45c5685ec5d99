//! Surface extraction and symmetric surface distances.
//!
//! Distances from one surface to the other are read off an exact anisotropic
//! Euclidean distance transform (lower envelope of parabolas, one pass per
//! axis), so the cost is linear in the volume size rather than quadratic in
//! the surface size.

use alloc::vec;
use alloc::vec::Vec;

use crate::volume::{linear_index, Dims, LabelSet, Mask, Spacing};
use crate::{Error, Result};

/// Voxels of the selection with at least one 6-neighbor outside it. Voxels on
/// the volume boundary always count as surface.
pub fn surface_voxels(m: &Mask, set: LabelSet) -> Vec<[usize; 3]> {
    let dims = m.dims();
    let inside = |x: usize, y: usize, z: usize| set.contains(m.get(x, y, z));
    let mut out = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if !inside(x, y, z) {
                    continue;
                }
                let on_border = x == 0
                    || y == 0
                    || z == 0
                    || x + 1 == dims[0]
                    || y + 1 == dims[1]
                    || z + 1 == dims[2];
                if on_border
                    || !inside(x - 1, y, z)
                    || !inside(x + 1, y, z)
                    || !inside(x, y - 1, z)
                    || !inside(x, y + 1, z)
                    || !inside(x, y, z - 1)
                    || !inside(x, y, z + 1)
                {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// 1D squared distance transform along a strided line, in place.
///
/// `f[i]` holds the squared distance accumulated from earlier axes (or
/// infinity); afterwards it holds `min_j f[j] + (s * (i - j))^2`.
fn edt_line(f: &mut [f64], s: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut [f64]) {
    let n = f.len();
    v.clear();
    z.clear();
    let s2 = s * s;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + s2 * (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let fp = f[p] + s2 * (p * p) as f64;
                    let cross = (fq - fp) / (2.0 * s2 * (q - p) as f64);
                    if cross <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(cross);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate().take(n) {
        while k + 1 < v.len() && z[k + 1] < i as f64 {
            k += 1;
        }
        let d = s * (i as f64 - v[k] as f64);
        *o = f[v[k]] + d * d;
    }
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest seed.
fn squared_edt(dims: Dims, spacing: Spacing, seeds: &[[usize; 3]]) -> Vec<f64> {
    let n = dims.iter().product();
    let mut dist = vec![f64::INFINITY; n];
    for p in seeds {
        dist[linear_index(dims, p[0], p[1], p[2])] = 0.0;
    }
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let len = dims[axis];
        let stride = match axis {
            0 => 1,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..dims[o2] {
            for a in 0..dims[o1] {
                let mut base = [0usize; 3];
                base[o1] = a;
                base[o2] = b;
                let start = linear_index(dims, base[0], base[1], base[2]);
                for i in 0..len {
                    line[i] = dist[start + i * stride];
                }
                edt_line(&mut line, spacing[axis], &mut v, &mut z, &mut out);
                for i in 0..len {
                    dist[start + i * stride] = out[i];
                }
            }
        }
    }
    dist
}

/// Pooled directed distances: every surface voxel of `a` to the surface of
/// `b`, followed by every surface voxel of `b` to the surface of `a`.
/// `None` when either surface is empty.
pub fn pooled_surface_distances(a: &Mask, b: &Mask, set: LabelSet) -> Result<Option<Vec<f64>>> {
    a.ensure_aligned(b)?;
    let sa = surface_voxels(a, set);
    let sb = surface_voxels(b, set);
    if sa.is_empty() || sb.is_empty() {
        return Ok(None);
    }
    let dims = a.dims();
    let to_b = squared_edt(dims, a.spacing(), &sb);
    let to_a = squared_edt(dims, a.spacing(), &sa);
    let mut d = Vec::with_capacity(sa.len() + sb.len());
    d.extend(sa.iter().map(|p| libm::sqrt(to_b[linear_index(dims, p[0], p[1], p[2])])));
    d.extend(sb.iter().map(|p| libm::sqrt(to_a[linear_index(dims, p[0], p[1], p[2])])));
    Ok(Some(d))
}

/// Percentile `q` in `[0, 100]` with linear interpolation between order
/// statistics (rank `q/100 * (n - 1)`).
pub fn percentile_linear(values: &mut [f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidSample("percentile of empty sample or q outside [0, 100]".into()));
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= values.len() {
        return Ok(values[values.len() - 1]);
    }
    Ok(values[lo] + frac * (values[lo + 1] - values[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceDistances {
    /// 95th percentile of the pooled distances, mm.
    pub hd95: Option<f64>,
    /// Mean of the pooled distances, mm.
    pub asd: Option<f64>,
}

pub fn surface_distances(a: &Mask, b: &Mask, set: LabelSet) -> Result<SurfaceDistances> {
    match pooled_surface_distances(a, b, set)? {
        None => Ok(SurfaceDistances { hd95: None, asd: None }),
        Some(mut d) => {
            let asd = d.iter().sum::<f64>() / d.len() as f64;
            let hd95 = percentile_linear(&mut d, 95.0)?;
            Ok(SurfaceDistances { hd95: Some(hd95), asd: Some(asd) })
        }
    }
}

pub fn hd95(a: &Mask, b: &Mask, set: LabelSet) -> Result<Option<f64>> {
    Ok(surface_distances(a, b, set)?.hd95)
}

pub fn asd(a: &Mask, b: &Mask, set: LabelSet) -> Result<Option<f64>> {
    Ok(surface_distances(a, b, set)?.asd)
}
