//! Restoration quality metrics.
//!
//! Image similarity (SSIM, PSNR) is measured on the tumor bounding box of the
//! reference mask. Segmentation agreement (Dice, HD95, ASD) is measured per
//! tumor region on full 3D masks.

mod overlap;
mod segment;
mod similarity;
mod surface;

use alloc::string::String;

pub use overlap::{dice, DiceScore};
pub use segment::{stand_in_segment, Segmentation, SegmenterConfig};
pub use similarity::{psnr_roi, ssim_2d, ssim_roi, DATA_RANGE, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use surface::{
    asd, hd95, percentile_linear, pooled_surface_distances, surface_distances, surface_voxels, SurfaceDistances,
};

use crate::volume::{mask_bounding_box, LabelSet, Mask, Volume};
use crate::Result;

/// Tumor sub-region scored separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Intrameatal,
    Extrameatal,
    Whole,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Intrameatal, Region::Extrameatal, Region::Whole];

    pub fn labels(self) -> LabelSet {
        match self {
            Region::Intrameatal => LabelSet::INTRAMEATAL,
            Region::Extrameatal => LabelSet::EXTRAMEATAL,
            Region::Whole => LabelSet::TUMOR,
        }
    }

    /// Column suffix used in `metrics.csv`.
    pub fn suffix(self) -> &'static str {
        match self {
            Region::Intrameatal => "intra",
            Region::Extrameatal => "extra",
            Region::Whole => "whole",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    LowDose,
    Restored,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::LowDose => "low_dose",
            Arm::Restored => "restored",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        match s {
            "low_dose" => Some(Arm::LowDose),
            "restored" => Some(Arm::Restored),
            _ => None,
        }
    }
}

/// One row of `metrics.csv`. Region-indexed arrays follow [`Region::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub study_id: String,
    pub beta_percent: u32,
    pub arm: Arm,
    pub ssim: f64,
    /// `f64::INFINITY` when the crop matches the reference exactly.
    pub psnr_db: f64,
    pub dice: [f64; 3],
    /// `None` when either surface is empty.
    pub hd95_mm: [Option<f64>; 3],
    pub asd_mm: [Option<f64>; 3],
}

/// Scores `test` against the standard-dose `reference` and segments it with
/// the stand-in segmenter to compare against `truth`.
pub fn evaluate_image(
    study_id: &str,
    beta_percent: u32,
    arm: Arm,
    test: &Volume,
    reference: &Volume,
    truth: &Mask,
    seg: &SegmenterConfig,
) -> Result<EvalRecord> {
    truth.ensure_annotates(test)?;
    let roi = mask_bounding_box(truth, LabelSet::TUMOR)?;
    let ssim = ssim_roi(test, reference, &roi)?;
    let psnr_db = psnr_roi(test, reference, &roi)?;
    let seg_roi = roi.dilate(seg.roi_margin, test.dims());
    let predicted = stand_in_segment(test, &seg_roi, seg.threshold_frac, seg.meatus_plane_x_mm)?.mask;
    let mut dice_v = [0.0; 3];
    let mut hd = [None; 3];
    let mut sd = [None; 3];
    for (i, region) in Region::ALL.into_iter().enumerate() {
        dice_v[i] = dice(&predicted, truth, region.labels())?.value;
        let d = surface_distances(&predicted, truth, region.labels())?;
        hd[i] = d.hd95;
        sd[i] = d.asd;
    }
    Ok(EvalRecord {
        study_id: study_id.into(),
        beta_percent,
        arm,
        ssim,
        psnr_db,
        dice: dice_v,
        hd95_mm: hd,
        asd_mm: sd,
    })
}
