//! Volume and label-mask containers, bounding boxes and cropping.
//!
//! Voxel data is stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

pub type Dims = [usize; 3];
pub type Spacing = [f64; 3];

/// Unit tag attached to normalized volumes.
pub const NORMALIZED_UNIT: &str = "normalized";

fn check_geometry(dims: Dims, spacing: Spacing, len: usize) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape(format!("all dims must be >= 1, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidShape(format!(
            "spacing must be finite and > 0, got {spacing:?}"
        )));
    }
    let expected = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| Error::InvalidShape(format!("dims {dims:?} overflow")))?;
    if expected != len {
        return Err(Error::InvalidShape(format!(
            "dims {dims:?} need {expected} voxels, data holds {len}"
        )));
    }
    Ok(())
}

#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

/// 3D scalar image with physical spacing in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
    unit: String,
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>, unit: impl Into<String>) -> Result<Self> {
        check_geometry(dims, spacing, data.len())?;
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Volume { dims, spacing, data, unit: unit.into() })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32, unit: impl Into<String>) -> Result<Self> {
        let len = dims.iter().product();
        Volume::new(dims, spacing, alloc::vec![value; len], unit)
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        dims: Dims,
        spacing: Spacing,
        unit: impl Into<String>,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume::new(dims, spacing, data, unit)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Same geometry, new voxel values.
    pub fn with_data(&self, data: Vec<f32>, unit: impl Into<String>) -> Result<Self> {
        Volume::new(self.dims, self.spacing, data, unit)
    }

    /// Voxelwise map keeping geometry and unit.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Result<Self> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Volume::new(self.dims, self.spacing, data, self.unit.clone())
    }

    pub fn same_geometry(&self, other_dims: Dims, other_spacing: Spacing) -> bool {
        self.dims == other_dims && self.spacing == other_spacing
    }

    pub fn ensure_aligned(&self, other: &Volume) -> Result<()> {
        if self.same_geometry(other.dims, other.spacing) {
            Ok(())
        } else {
            Err(Error::Mismatch(format!(
                "volumes differ: dims {:?} vs {:?}, spacing {:?} vs {:?}",
                self.dims, other.dims, self.spacing, other.spacing
            )))
        }
    }

    /// Row-major copy of slice `z`: `ny` rows of `nx` values.
    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims[0] * self.dims[1];
        &self.data[z * n..(z + 1) * n]
    }
}

/// Tumor sub-region labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Intrameatal = 1,
    Extrameatal = 2,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Background),
            1 => Some(Label::Intrameatal),
            2 => Some(Label::Extrameatal),
            _ => None,
        }
    }
}

/// A set of labels, stored as a bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelSet(u8);

impl LabelSet {
    pub const INTRAMEATAL: LabelSet = LabelSet(1 << 1);
    pub const EXTRAMEATAL: LabelSet = LabelSet(1 << 2);
    pub const TUMOR: LabelSet = LabelSet((1 << 1) | (1 << 2));

    pub fn of(labels: &[Label]) -> LabelSet {
        LabelSet(labels.iter().fold(0, |acc, &l| acc | (1 << l as u8)))
    }

    #[inline]
    pub fn contains(self, label: u8) -> bool {
        label < 8 && self.0 & (1 << label) != 0
    }
}

/// Per-voxel labels aligned to a [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    dims: Dims,
    spacing: Spacing,
    labels: Vec<u8>,
}

impl Mask {
    pub fn new(dims: Dims, spacing: Spacing, labels: Vec<u8>) -> Result<Self> {
        check_geometry(dims, spacing, labels.len())?;
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| Label::from_u8(l).is_none()) {
            return Err(Error::InvalidShape(format!("label {l} at voxel index {i} is not in {{0,1,2}}")));
        }
        Ok(Mask { dims, spacing, labels })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Result<Self> {
        Mask::new(dims, spacing, alloc::vec![0; dims.iter().product()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[linear_index(self.dims, x, y, z)]
    }

    pub fn count(&self, set: LabelSet) -> usize {
        self.labels.iter().filter(|&&l| set.contains(l)).count()
    }

    pub fn ensure_aligned(&self, other: &Mask) -> Result<()> {
        if self.dims == other.dims && self.spacing == other.spacing {
            Ok(())
        } else {
            Err(Error::Mismatch(format!(
                "masks differ: dims {:?} vs {:?}, spacing {:?} vs {:?}",
                self.dims, other.dims, self.spacing, other.spacing
            )))
        }
    }

    pub fn ensure_annotates(&self, v: &Volume) -> Result<()> {
        if v.same_geometry(self.dims, self.spacing) {
            Ok(())
        } else {
            Err(Error::Mismatch(format!(
                "mask dims {:?}/spacing {:?} do not match volume {:?}/{:?}",
                self.dims,
                self.spacing,
                v.dims(),
                v.spacing()
            )))
        }
    }
}

/// Axis-aligned box of inclusive voxel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Result<Self> {
        if (0..3).any(|a| min[a] > max[a]) {
            return Err(Error::OutOfRange(format!("box min {min:?} exceeds max {max:?}")));
        }
        Ok(BoundingBox { min, max })
    }

    pub fn full(dims: Dims) -> Self {
        BoundingBox { min: [0; 3], max: [dims[0] - 1, dims[1] - 1, dims[2] - 1] }
    }

    pub fn extent(&self) -> Dims {
        [
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        ]
    }

    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x, y, z];
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn fits(&self, dims: Dims) -> bool {
        (0..3).all(|a| self.min[a] <= self.max[a] && self.max[a] < dims[a])
    }

    /// Grows the box by `margin` voxels per side, clipped to `dims`.
    pub fn dilate(&self, margin: usize, dims: Dims) -> Self {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = self.min[a].saturating_sub(margin);
            out.max[a] = (self.max[a] + margin).min(dims[a] - 1);
        }
        out
    }

    fn check_inside(&self, dims: Dims) -> Result<()> {
        if self.fits(dims) {
            Ok(())
        } else {
            Err(Error::OutOfRange(format!(
                "box {:?}..={:?} does not fit dims {:?}",
                self.min, self.max, dims
            )))
        }
    }
}

/// Tightest box around every voxel whose label is in `set`.
pub fn mask_bounding_box(m: &Mask, set: LabelSet) -> Result<BoundingBox> {
    let [nx, ny, nz] = m.dims;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for z in 0..nz {
        for y in 0..ny {
            let row = &m.labels[linear_index(m.dims, 0, y, z)..][..nx];
            for (x, &l) in row.iter().enumerate() {
                if set.contains(l) {
                    any = true;
                    let p = [x, y, z];
                    for a in 0..3 {
                        lo[a] = lo[a].min(p[a]);
                        hi[a] = hi[a].max(p[a]);
                    }
                }
            }
        }
    }
    if !any {
        return Err(Error::EmptyMask);
    }
    Ok(BoundingBox { min: lo, max: hi })
}

fn crop_values<T: Copy>(dims: Dims, data: &[T], b: &BoundingBox) -> Vec<T> {
    let [ex, ey, ez] = b.extent();
    let mut out = Vec::with_capacity(ex * ey * ez);
    for z in b.min[2]..=b.max[2] {
        for y in b.min[1]..=b.max[1] {
            let start = linear_index(dims, b.min[0], y, z);
            out.extend_from_slice(&data[start..start + ex]);
        }
    }
    out
}

/// Sub-volume inside `b`, spacing preserved.
pub fn crop(v: &Volume, b: &BoundingBox) -> Result<Volume> {
    b.check_inside(v.dims)?;
    Volume::new(b.extent(), v.spacing, crop_values(v.dims, &v.data, b), v.unit.clone())
}

pub fn crop_mask(m: &Mask, b: &BoundingBox) -> Result<Mask> {
    b.check_inside(m.dims)?;
    Mask::new(b.extent(), m.spacing, crop_values(m.dims, &m.labels, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ramp(dims: Dims) -> Volume {
        let n = dims.iter().product::<usize>();
        Volume::new(dims, [1.0, 1.0, 1.0], (0..n).map(|i| i as f32).collect(), "au").unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::new([2, 2, 2], [1.0; 3], vec![0.0; 4], "").is_err());
        assert!(Volume::new([0, 2, 2], [1.0; 3], vec![], "").is_err());
        assert!(Volume::new([1, 1, 1], [1.0, 0.0, 1.0], vec![0.0], "").is_err());
        assert!(Mask::new([1, 1, 2], [1.0; 3], vec![0, 3]).is_err());
    }

    #[test]
    fn non_finite_names_first_voxel() {
        let err = Volume::new([3, 1, 1], [1.0; 3], vec![0.0, f32::NAN, f32::INFINITY], "").unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn bounding_box_single_voxel() {
        let dims = [6, 6, 6];
        let mut labels = vec![0u8; 216];
        labels[linear_index(dims, 3, 4, 5)] = 1;
        let m = Mask::new(dims, [1.0; 3], labels).unwrap();
        let b = mask_bounding_box(&m, LabelSet::TUMOR).unwrap();
        assert_eq!(b, BoundingBox { min: [3, 4, 5], max: [3, 4, 5] });
    }

    #[test]
    fn bounding_box_two_labels() {
        let dims = [6, 6, 6];
        let mut labels = vec![0u8; 216];
        labels[linear_index(dims, 1, 1, 1)] = 1;
        labels[linear_index(dims, 5, 2, 1)] = 2;
        let m = Mask::new(dims, [1.0; 3], labels).unwrap();
        let b = mask_bounding_box(&m, LabelSet::of(&[Label::Intrameatal, Label::Extrameatal])).unwrap();
        assert_eq!(b, BoundingBox { min: [1, 1, 1], max: [5, 2, 1] });
        let only_intra = mask_bounding_box(&m, LabelSet::INTRAMEATAL).unwrap();
        assert_eq!(only_intra, BoundingBox { min: [1, 1, 1], max: [1, 1, 1] });
    }

    #[test]
    fn bounding_box_empty_selection_is_an_error() {
        let m = Mask::empty([4, 4, 4], [1.0; 3]).unwrap();
        assert_eq!(mask_bounding_box(&m, LabelSet::TUMOR), Err(Error::EmptyMask));
    }

    #[test]
    fn crop_full_and_single() {
        let v = ramp([4, 3, 2]);
        assert_eq!(crop(&v, &BoundingBox::full(v.dims())).unwrap(), v);
        let one = crop(&v, &BoundingBox::new([2, 1, 1], [2, 1, 1]).unwrap()).unwrap();
        assert_eq!(one.dims(), [1, 1, 1]);
        assert_eq!(one.data(), &[v.get(2, 1, 1)]);
    }

    #[test]
    fn crop_rejects_out_of_range() {
        let v = ramp([4, 3, 2]);
        let b = BoundingBox::new([0, 0, 0], [4, 2, 1]).unwrap();
        assert!(matches!(crop(&v, &b), Err(Error::OutOfRange(_))));
        assert!(BoundingBox::new([2, 0, 0], [1, 0, 0]).is_err());
    }

    #[test]
    fn nested_crops_compose() {
        let v = ramp([7, 6, 5]);
        let outer = BoundingBox::new([1, 2, 1], [6, 5, 4]).unwrap();
        let inner = BoundingBox::new([2, 0, 1], [4, 2, 3]).unwrap();
        // Inner box expressed in outer-crop coordinates, composed by hand.
        let composed = BoundingBox::new([3, 2, 2], [5, 4, 4]).unwrap();
        let twice = crop(&crop(&v, &outer).unwrap(), &inner).unwrap();
        assert_eq!(twice, crop(&v, &composed).unwrap());
    }

    #[test]
    fn crop_indexing_exhaustive() {
        let v = ramp([4, 3, 3]);
        for x0 in 0..4 {
            for x1 in x0..4 {
                for y0 in 0..3 {
                    for z0 in 0..3 {
                        let b = BoundingBox::new([x0, y0, z0], [x1, 2, 2]).unwrap();
                        let c = crop(&v, &b).unwrap();
                        let [ex, ey, ez] = c.dims();
                        for k in 0..ez {
                            for j in 0..ey {
                                for i in 0..ex {
                                    assert_eq!(c.get(i, j, k), v.get(i + x0, j + y0, k + z0));
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dilate_clips_to_volume() {
        let b = BoundingBox::new([1, 0, 3], [2, 2, 3]).unwrap().dilate(2, [5, 5, 5]);
        assert_eq!(b, BoundingBox { min: [0, 0, 1], max: [4, 4, 4] });
    }
}
