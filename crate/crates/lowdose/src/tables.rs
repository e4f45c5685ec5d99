//! CSV and small text tables exchanged between subcommands.
//!
//! Numbers use the shortest representation that round-trips. Missing surface
//! distances are written as `undefined`, an infinite PSNR as `inf`.

use std::fs;
use std::path::Path;

use lowdose_core::calibrate::{AffineIntensityMap, Histogram};
use lowdose_core::metrics::{Arm, EvalRecord};
use lowdose_core::phantom::Study;
use lowdose_core::stats::SignificanceRow;

use crate::error::{AppError, AppResult, Context};
use crate::format::write_bytes;

pub const METRICS_HEADER: [&str; 14] = [
    "study_id", "beta", "arm", "ssim", "psnr_db", "dice_intra", "dice_extra", "dice_whole", "hd95_intra",
    "hd95_extra", "hd95_whole", "asd_intra", "asd_extra", "asd_whole",
];
pub const SIGNIFICANCE_HEADER: [&str; 7] = ["metric", "beta", "n", "w", "p", "method", "star"];
pub const UNDEFINED: &str = "undefined";

fn bad(msg: impl Into<String>) -> AppError {
    AppError::Data(msg.into())
}

pub fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        x.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| UNDEFINED.to_string(), fmt_f64)
}

fn parse_f64(s: &str) -> AppResult<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| bad(format!("bad number {s:?}"))),
    }
}

fn parse_opt(s: &str) -> AppResult<Option<f64>> {
    if s == UNDEFINED {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

/// Serializes rows with a mandatory header into CSV bytes.
pub fn csv_bytes<R, I>(header: &[&str], rows: I) -> AppResult<Vec<u8>>
where
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
    I: IntoIterator<Item = R>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| bad(e.to_string()))
}

fn open(path: &Path, header: &[&str]) -> AppResult<csv::Reader<fs::File>> {
    let mut r = csv::Reader::from_path(path).context(path.display())?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(bad(format!("{}: expected columns {}, found {}", path.display(), header.join(","), found.join(","))));
    }
    Ok(r)
}

fn metric_row(r: &EvalRecord) -> Vec<String> {
    let mut row = vec![r.study_id.clone(), r.beta_percent.to_string(), r.arm.as_str().into(), fmt_f64(r.ssim), fmt_f64(r.psnr_db)];
    row.extend(r.dice.iter().map(|&d| fmt_f64(d)));
    row.extend(r.hd95_mm.iter().map(|&d| fmt_opt(d)));
    row.extend(r.asd_mm.iter().map(|&d| fmt_opt(d)));
    row
}

pub fn metrics_csv(records: &[EvalRecord]) -> AppResult<Vec<u8>> {
    csv_bytes(&METRICS_HEADER, records.iter().map(metric_row))
}

pub fn write_metrics(path: &Path, records: &[EvalRecord]) -> AppResult<()> {
    write_bytes(path, &metrics_csv(records)?)
}

pub fn read_metrics(path: &Path) -> AppResult<Vec<EvalRecord>> {
    let mut r = open(path, &METRICS_HEADER)?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = || format!("{} row {}", path.display(), i + 1);
        let f = |k: usize| parse_f64(&row[k]).context(line());
        let o = |k: usize| parse_opt(&row[k]).context(line());
        out.push(EvalRecord {
            study_id: row[0].to_string(),
            beta_percent: row[1].parse().map_err(|_| bad(format!("{}: bad beta {:?}", line(), &row[1])))?,
            arm: Arm::parse(&row[2]).ok_or_else(|| bad(format!("{}: bad arm {:?}", line(), &row[2])))?,
            ssim: f(3)?,
            psnr_db: f(4)?,
            dice: [f(5)?, f(6)?, f(7)?],
            hd95_mm: [o(8)?, o(9)?, o(10)?],
            asd_mm: [o(11)?, o(12)?, o(13)?],
        });
    }
    Ok(out)
}

pub fn significance_csv(rows: &[SignificanceRow]) -> AppResult<Vec<u8>> {
    csv_bytes(
        &SIGNIFICANCE_HEADER,
        rows.iter().map(|r| {
            [
                r.metric.clone(),
                r.beta_percent.to_string(),
                r.result.n_effective.to_string(),
                fmt_f64(r.result.w_statistic),
                fmt_f64(r.result.p_two_sided),
                r.result.method.as_str().to_string(),
                if r.star { "*".into() } else { String::new() },
            ]
        }),
    )
}

/// `(metric, beta, star)` triples from a significance table.
pub fn read_significance_stars(path: &Path) -> AppResult<Vec<(String, u32, bool)>> {
    let mut r = open(path, &SIGNIFICANCE_HEADER)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let beta = row[1].parse().map_err(|_| bad(format!("{}: bad beta {:?}", path.display(), &row[1])))?;
        out.push((row[0].to_string(), beta, &row[6] == "*"));
    }
    Ok(out)
}

pub fn truth_csv(studies: &[Study]) -> AppResult<Vec<u8>> {
    let header = [
        "study_id", "patient_id", "bbox_min_x", "bbox_min_y", "bbox_min_z", "bbox_max_x", "bbox_max_y", "bbox_max_z",
        "lesion_voxels", "lesion_mean_t1", "lesion_mean_t1ce", "tissue_mean", "window_gain", "window_bias",
        "meatus_plane_x_mm",
    ];
    csv_bytes(
        &header,
        studies.iter().map(|s| {
            let t = &s.phantom.truth;
            let b = &t.lesion_bbox;
            let mut row = vec![s.study_id.to_string(), s.patient_id.to_string()];
            row.extend(b.min.iter().chain(&b.max).map(|v| v.to_string()));
            row.push(t.lesion_voxels.to_string());
            row.extend(
                [t.lesion_mean_t1, t.lesion_mean_t1ce, t.tissue_mean, t.window_gain, t.window_bias, t.meatus_plane_x_mm]
                    .map(fmt_f64),
            );
            row
        }),
    )
}

pub fn split_csv(studies: &[Study]) -> AppResult<Vec<u8>> {
    csv_bytes(
        &["study_id", "patient_id", "split"],
        studies.iter().map(|s| [s.study_id.to_string(), s.patient_id.to_string(), s.split.as_str().to_string()]),
    )
}

/// Study layout recorded in `split.csv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRow {
    pub study_id: String,
    pub split: String,
}

pub fn read_split(path: &Path) -> AppResult<Vec<SplitRow>> {
    let mut r = open(path, &["study_id", "patient_id", "split"])?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        out.push(SplitRow { study_id: row[0].to_string(), split: row[2].to_string() });
    }
    Ok(out)
}

/// Meatus plane per study, from `truth.csv`.
pub fn read_truth_planes(path: &Path) -> AppResult<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(path).context(path.display())?;
    let headers = r.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "meatus_plane_x_mm")
        .ok_or_else(|| bad(format!("{}: missing meatus_plane_x_mm", path.display())))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        out.push((row[0].to_string(), parse_f64(&row[col]).context(path.display())?));
    }
    Ok(out)
}

pub fn sim_manifest_csv(rows: &[(u32, f64, f64)]) -> AppResult<Vec<u8>> {
    csv_bytes(&["beta", "lo", "hi"], rows.iter().map(|&(b, lo, hi)| [b.to_string(), fmt_f64(lo), fmt_f64(hi)]))
}

pub fn encode_map(m: &AffineIntensityMap) -> String {
    format!("scale={}\noffset={}\n", m.scale(), m.offset())
}

pub fn parse_map(text: &str) -> AppResult<AffineIntensityMap> {
    let (mut scale, mut offset) = (None, None);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match line.split_once('=') {
            Some(("scale", v)) => scale = Some(parse_f64(v.trim())?),
            Some(("offset", v)) => offset = Some(parse_f64(v.trim())?),
            _ => return Err(bad(format!("bad calibration line {line:?}"))),
        }
    }
    let scale = scale.ok_or_else(|| bad("calibration is missing scale"))?;
    let offset = offset.ok_or_else(|| bad("calibration is missing offset"))?;
    AffineIntensityMap::new(scale, offset).map_err(|e| bad(e.to_string()))
}

pub fn read_map(path: &Path) -> AppResult<AffineIntensityMap> {
    parse_map(&fs::read_to_string(path).context(path.display())?).context(path.display())
}

/// Both histograms must share bin edges.
pub fn histogram_csv(t1: &Histogram, t1ce: &Histogram) -> AppResult<Vec<u8>> {
    if t1.edges() != t1ce.edges() {
        return Err(bad("histograms must share bin edges"));
    }
    csv_bytes(
        &["bin_center", "count_t1", "count_t1ce"],
        (0..t1.n_bins()).map(|i| [fmt_f64(t1.bin_center(i)), t1.counts()[i].to_string(), t1ce.counts()[i].to_string()]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, arm: Arm) -> EvalRecord {
        EvalRecord {
            study_id: id.into(),
            beta_percent: 30,
            arm,
            ssim: 0.1 + 0.2,
            psnr_db: f64::INFINITY,
            dice: [1.0, 0.0, 0.5],
            hd95_mm: [Some(0.5), None, Some(1.0 / 3.0)],
            asd_mm: [None, None, Some(2.0)],
        }
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        let recs = vec![record("s1", Arm::LowDose), record("s,2", Arm::Restored)];
        write_metrics(&p, &recs).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&(METRICS_HEADER.join(",") + "\n")));
        assert!(text.contains("0.30000000000000004,inf,1,0,0.5,0.5,undefined,"));
        assert!(text.contains("\"s,2\""));
        assert_eq!(read_metrics(&p).unwrap(), recs);
    }

    #[test]
    fn wrong_columns_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "study_id,beta\n1,10\n").unwrap();
        assert!(read_metrics(&p).is_err());
    }

    #[test]
    fn calibration_map_round_trip() {
        let m = AffineIntensityMap::new(0.8125, -0.03).unwrap();
        assert_eq!(parse_map(&encode_map(&m)).unwrap(), m);
        assert!(parse_map("scale=1\n").is_err());
        assert!(parse_map("scale=0\noffset=0\n").is_err());
    }
}
