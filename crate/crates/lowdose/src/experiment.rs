//! End-to-end run: cohort, calibration, simulation, per-dose training,
//! restoration, scoring, statistics and reports.
//!
//! Outputs under the work directory:
//!
//! ```text
//! truth.csv  split.csv  calibration.csv
//! models/b{beta}.ckpt  models/b{beta}_history.csv
//! metrics.csv  significance.csv  table4.csv  fig4.csv  fig4_{metric}.svg
//! manifest.json
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use lowdose_core::calibrate::{estimate_calibration, apply_calibration, AffineIntensityMap, DEFAULT_BINS, DEFAULT_SMOOTH_RADIUS};
use lowdose_core::infer::restore_volume;
use lowdose_core::metrics::{evaluate_image, Arm, EvalRecord, SegmenterConfig};
use lowdose_core::model::{train, ModelParams, TrainPair};
use lowdose_core::phantom::{generate_cohort, CohortVariation, Split, Study};
use lowdose_core::simulate::{normalize_unit_range, simulate_low_dose, DoseFraction};
use lowdose_core::stats::{significance_table, SignificanceRow};
use lowdose_core::volume::{mask_bounding_box, LabelSet};
use lowdose_core::{BoundingBox, Mask, Volume};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, Checkpoint};
use crate::config::ExperimentConfig;
use crate::error::{AppError, AppResult, Context};
use crate::format::{read_mask, read_volume, write_bytes, write_mask, write_volume};
use crate::report;
use crate::tables;

/// One study after calibration, with everything the dose loop needs.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub study_id: String,
    pub split: Split,
    pub t1: Volume,
    pub t1ce_cal: Volume,
    pub map: AffineIntensityMap,
    pub mask: Mask,
    pub roi: BoundingBox,
    pub meatus_plane_x_mm: f64,
}

/// Raw cohort member as stored on disk.
#[derive(Debug, Clone)]
pub struct RawStudy {
    pub study_id: String,
    pub split: Split,
    pub t1: Volume,
    pub t1ce: Volume,
    pub mask: Mask,
    pub meatus_plane_x_mm: f64,
}

pub fn study_dir(root: &Path, study_id: &str) -> PathBuf {
    root.join(format!("study_{study_id}"))
}

fn split_from_str(s: &str) -> AppResult<Split> {
    [Split::Train, Split::Validation, Split::Test]
        .into_iter()
        .find(|x| x.as_str() == s)
        .ok_or_else(|| AppError::Data(format!("unknown split {s:?}")))
}

pub fn raw_from_generated(studies: Vec<Study>) -> Vec<RawStudy> {
    studies
        .into_iter()
        .map(|s| RawStudy {
            study_id: s.study_id.to_string(),
            split: s.split,
            meatus_plane_x_mm: s.phantom.truth.meatus_plane_x_mm,
            t1: s.phantom.t1,
            t1ce: s.phantom.t1ce,
            mask: s.phantom.mask,
        })
        .collect()
}

/// Writes a generated cohort in the layout [`load_cohort`] reads.
pub fn write_cohort(dir: &Path, studies: &[Study]) -> AppResult<()> {
    for s in studies {
        let d = study_dir(dir, &s.study_id.to_string());
        write_volume(&d.join("t1.hdr"), &s.phantom.t1)?;
        write_volume(&d.join("t1ce.hdr"), &s.phantom.t1ce)?;
        write_mask(&d.join("mask.hdr"), &s.phantom.mask)?;
    }
    write_bytes(&dir.join("truth.csv"), &tables::truth_csv(studies)?)?;
    write_bytes(&dir.join("split.csv"), &tables::split_csv(studies)?)
}

/// Reads a cohort written by `phantom-gen`.
pub fn load_cohort(dir: &Path) -> AppResult<Vec<RawStudy>> {
    let split = tables::read_split(&dir.join("split.csv"))?;
    let planes = tables::read_truth_planes(&dir.join("truth.csv"))?;
    split
        .into_iter()
        .map(|row| {
            let plane = planes
                .iter()
                .find(|(id, _)| *id == row.study_id)
                .map(|(_, p)| *p)
                .ok_or_else(|| AppError::Data(format!("study {} missing from truth.csv", row.study_id)))?;
            let d = study_dir(dir, &row.study_id);
            Ok(RawStudy {
                split: split_from_str(&row.split)?,
                t1: read_volume(&d.join("t1.hdr"))?,
                t1ce: read_volume(&d.join("t1ce.hdr"))?,
                mask: read_mask(&d.join("mask.hdr"))?,
                meatus_plane_x_mm: plane,
                study_id: row.study_id,
            })
        })
        .collect()
}

pub fn prepare(raw: RawStudy) -> AppResult<StudyData> {
    let what = format!("calibrate study {}", raw.study_id);
    let map = estimate_calibration(&raw.t1, &raw.t1ce, DEFAULT_BINS, DEFAULT_SMOOTH_RADIUS).context(&what)?;
    let t1ce_cal = apply_calibration(&raw.t1ce, &map).context(&what)?;
    let roi = mask_bounding_box(&raw.mask, LabelSet::TUMOR).context(format!("study {}", raw.study_id))?;
    Ok(StudyData {
        study_id: raw.study_id,
        split: raw.split,
        t1: raw.t1,
        t1ce_cal,
        map,
        mask: raw.mask,
        roi,
        meatus_plane_x_mm: raw.meatus_plane_x_mm,
    })
}

/// Normalized low-dose input, normalized standard-dose target and
/// normalized T1, for one study at one dose.
pub struct DoseImages {
    pub low: Volume,
    pub standard: Volume,
    pub t1: Volume,
}

pub fn dose_images(s: &StudyData, beta: u32) -> AppResult<DoseImages> {
    let what = format!("simulate study {} at dose {beta}", s.study_id);
    let dose = DoseFraction::new(beta).context(&what)?;
    let low = simulate_low_dose(&s.t1, &s.t1ce_cal, dose).context(&what)?;
    Ok(DoseImages {
        low: normalize_unit_range(&low).context(&what)?.0,
        standard: normalize_unit_range(&s.t1ce_cal).context(&what)?.0,
        t1: normalize_unit_range(&s.t1).context(&what)?.0,
    })
}

pub fn train_pairs(studies: &[StudyData], beta: u32, channels: usize) -> AppResult<Vec<TrainPair>> {
    studies
        .iter()
        .filter(|s| s.split == Split::Train)
        .map(|s| {
            let d = dose_images(s, beta)?;
            Ok(TrainPair { input: d.low, target: d.standard, aux: (channels == 2).then_some(d.t1), roi: Some(s.roi) })
        })
        .collect()
}

pub fn segmenter(cfg: &ExperimentConfig, s: &StudyData) -> SegmenterConfig {
    SegmenterConfig {
        threshold_frac: cfg.metrics.threshold_frac,
        roi_margin: cfg.metrics.roi_margin,
        meatus_plane_x_mm: s.meatus_plane_x_mm,
    }
}

/// Restores and scores every test study at one dose. Returns low-dose and
/// restored records, in study order.
pub fn evaluate_dose(
    cfg: &ExperimentConfig,
    studies: &[StudyData],
    beta: u32,
    params: &ModelParams,
) -> AppResult<Vec<EvalRecord>> {
    let net = params.network();
    let tests: Vec<&StudyData> = studies.iter().filter(|s| s.split == Split::Test).collect();
    let per_study: Vec<AppResult<[EvalRecord; 2]>> = tests
        .par_iter()
        .map(|s| {
            let d = dose_images(s, beta)?;
            let aux = (cfg.model.channels == 2).then_some(&d.t1);
            let (ph, pw) = (cfg.infer.patch[0], cfg.infer.patch[1]);
            let restored = restore_volume(&net, &d.low, aux, (ph, pw), cfg.infer.sigma_frac)
                .context(format!("restore study {} at dose {beta}", s.study_id))?;
            let seg = segmenter(cfg, s);
            let what = format!("evaluate study {} at dose {beta}", s.study_id);
            let a = evaluate_image(&s.study_id, beta, Arm::LowDose, &d.low, &d.standard, &s.mask, &seg).context(&what)?;
            let b = evaluate_image(&s.study_id, beta, Arm::Restored, &restored, &d.standard, &s.mask, &seg).context(&what)?;
            Ok([a, b])
        })
        .collect();
    let mut out = Vec::with_capacity(2 * tests.len());
    for r in per_study {
        out.extend(r?);
    }
    Ok(out)
}

/// Everything a run produced, in memory.
#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<EvalRecord>,
    pub significance: Vec<SignificanceRow>,
    pub work_dir: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn manifest(cfg: &ExperimentConfig, jobs: usize, status: &str, files: &[(String, String)]) -> AppResult<Vec<u8>> {
    let seeds: serde_json::Map<String, serde_json::Value> = cfg
        .doses
        .betas
        .iter()
        .map(|&b| (b.to_string(), serde_json::Value::from(cfg.train_config(b).seed)))
        .collect();
    let files: serde_json::Map<String, serde_json::Value> =
        files.iter().map(|(k, v)| (k.clone(), serde_json::Value::from(v.as_str()))).collect();
    let doc = serde_json::json!({
        "status": status,
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": cfg.hash(),
        "config": cfg.canonical(),
        "seed": cfg.seed,
        "train_seeds": seeds,
        "jobs": jobs,
        "deterministic": jobs == 1,
        "outputs_sha256": files,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| AppError::Data(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Runs the whole pipeline. `jobs` only feeds the manifest; the caller
/// installs the thread pool.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize, log: &(dyn Fn(&str) + Sync)) -> AppResult<RunOutput> {
    cfg.validate()?;
    let work = cfg.work_dir();
    fs::create_dir_all(&work).context(work.display())?;
    write_bytes(&work.join("manifest.json"), &manifest(cfg, jobs, "incomplete", &[])?)?;

    let raw = match cfg.data_dir() {
        Some(dir) => load_cohort(&dir).context("load cohort")?,
        None => {
            log(&format!("generating {} phantoms", cfg.cohort.phantoms));
            let studies = generate_cohort(cfg.cohort.phantoms, cfg.seed, &CohortVariation::default())
                .context("phantom generation")?;
            write_bytes(&work.join("truth.csv"), &tables::truth_csv(&studies)?)?;
            write_bytes(&work.join("split.csv"), &tables::split_csv(&studies)?)?;
            raw_from_generated(studies)
        }
    };
    if !raw.iter().any(|s| s.split == Split::Train) || !raw.iter().any(|s| s.split == Split::Test) {
        return Err(AppError::Data("cohort needs at least one training and one test study".into()));
    }
    let studies: Vec<StudyData> = raw.into_par_iter().map(prepare).collect::<AppResult<_>>()?;
    let cal = tables::csv_bytes(
        &["study_id", "scale", "offset"],
        studies.iter().map(|s| [s.study_id.clone(), tables::fmt_f64(s.map.scale()), tables::fmt_f64(s.map.offset())]),
    )?;
    write_bytes(&work.join("calibration.csv"), &cal)?;

    let arch = cfg.arch();
    let per_dose: Vec<AppResult<Vec<EvalRecord>>> = cfg
        .doses
        .betas
        .par_iter()
        .map(|&beta| {
            let pairs = train_pairs(&studies, beta, arch.channels)?;
            let tc = cfg.train_config(beta);
            log(&format!("dose {beta}: training on {} studies for {} steps", pairs.len(), tc.steps));
            let (params, history) = train(&pairs, &arch, &tc).context(format!("train dose {beta}"))?;
            let models = work.join("models");
            checkpoint::save(&models.join(format!("b{beta}.ckpt")), &Checkpoint { params: params.clone(), seed: tc.seed, steps: tc.steps })?;
            checkpoint::write_history(&models.join(format!("b{beta}_history.csv")), &history)?;
            log(&format!("dose {beta}: restoring and scoring"));
            evaluate_dose(cfg, &studies, beta, &params)
        })
        .collect();
    let mut records = Vec::new();
    for r in per_dose {
        records.extend(r?);
    }

    let significance = significance_table(&records);
    let stars: BTreeSet<(String, u32)> =
        significance.iter().filter(|r| r.star).map(|r| (r.metric.clone(), r.beta_percent)).collect();
    let mut outputs: Vec<(String, Vec<u8>)> = vec![
        ("metrics.csv".into(), tables::metrics_csv(&records)?),
        ("significance.csv".into(), tables::significance_csv(&significance)?),
        ("table4.csv".into(), report::table4(&records, &stars)?),
        ("fig4.csv".into(), report::fig4(&records)?),
    ];
    if cfg.report.svg {
        for m in ["dice", "hd95_mm", "asd_mm"] {
            outputs.push((format!("fig4_{m}.svg"), report::fig4_svg(&records, m).into_bytes()));
        }
    }
    let mut hashes = Vec::new();
    for (name, bytes) in &outputs {
        write_bytes(&work.join(name), bytes)?;
        hashes.push((name.clone(), sha256_hex(bytes)));
    }
    write_bytes(&work.join("manifest.json"), &manifest(cfg, jobs, "complete", &hashes)?)?;
    Ok(RunOutput { records, significance, work_dir: work })
}
