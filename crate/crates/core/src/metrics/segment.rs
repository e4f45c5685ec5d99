//! Threshold segmenter used in place of a trained tumor segmentation network.
//!
//! Inside a region of interest, voxels at or above
//! `lo + threshold_frac * (hi - lo)` (with `lo`/`hi` the ROI extremes) are
//! candidates; the largest 6-connected candidate component is the tumor, and
//! a sagittal plane splits it into intrameatal and extrameatal labels.

use alloc::vec;
use alloc::vec::Vec;

use crate::volume::{linear_index, BoundingBox, Label, Mask, Volume};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterConfig {
    pub threshold_frac: f64,
    /// Voxels added on every side of the tumor box to form the ROI.
    pub roi_margin: usize,
    pub meatus_plane_x_mm: f64,
}

impl SegmenterConfig {
    pub fn new(meatus_plane_x_mm: f64) -> Self {
        SegmenterConfig { threshold_frac: 0.5, roi_margin: 3, meatus_plane_x_mm }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: Mask,
    /// No voxel passed the threshold.
    pub empty: bool,
}

pub fn stand_in_segment(
    v: &Volume,
    roi: &BoundingBox,
    threshold_frac: f64,
    meatus_plane_x_mm: f64,
) -> Result<Segmentation> {
    let dims = v.dims();
    if !roi.fits(dims) {
        return Err(Error::OutOfRange(alloc::format!("ROI {roi:?} outside volume {dims:?}")));
    }
    if !threshold_frac.is_finite() {
        return Err(Error::Config("threshold fraction must be finite".into()));
    }
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for z in roi.min[2]..=roi.max[2] {
        for y in roi.min[1]..=roi.max[1] {
            for x in roi.min[0]..=roi.max[0] {
                let val = v.get(x, y, z);
                lo = lo.min(val);
                hi = hi.max(val);
            }
        }
    }
    let threshold = lo as f64 + threshold_frac * (hi as f64 - lo as f64);
    let n = dims.iter().product();
    let mut candidate = vec![false; n];
    for z in roi.min[2]..=roi.max[2] {
        for y in roi.min[1]..=roi.max[1] {
            for x in roi.min[0]..=roi.max[0] {
                if v.get(x, y, z) as f64 >= threshold {
                    candidate[linear_index(dims, x, y, z)] = true;
                }
            }
        }
    }

    // Largest 6-connected component; ties go to the component found first in
    // linear order.
    let mut component = vec![0u32; n];
    let mut best: (u32, usize) = (0, 0);
    let mut next_id = 1u32;
    let mut stack = Vec::new();
    for start in 0..n {
        if !candidate[start] || component[start] != 0 {
            continue;
        }
        let id = next_id;
        next_id += 1;
        let mut size = 0usize;
        component[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let x = i % dims[0];
            let y = (i / dims[0]) % dims[1];
            let z = i / (dims[0] * dims[1]);
            let mut visit = |j: usize| {
                if candidate[j] && component[j] == 0 {
                    component[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < dims[0] {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - dims[0]);
            }
            if y + 1 < dims[1] {
                visit(i + dims[0]);
            }
            if z > 0 {
                visit(i - dims[0] * dims[1]);
            }
            if z + 1 < dims[2] {
                visit(i + dims[0] * dims[1]);
            }
        }
        if size > best.1 {
            best = (id, size);
        }
    }

    let sx = v.spacing()[0];
    let labels: Vec<u8> = component
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if best.0 == 0 || c != best.0 {
                Label::Background as u8
            } else if ((i % dims[0]) as f64) * sx < meatus_plane_x_mm {
                Label::Intrameatal as u8
            } else {
                Label::Extrameatal as u8
            }
        })
        .collect();
    Ok(Segmentation { mask: Mask::new(dims, v.spacing(), labels)?, empty: best.0 == 0 })
}
