//! Summary tables built from `metrics.csv` and `significance.csv`.
//!
//! `table4.csv` holds mean and sample standard deviation (n - 1 denominator)
//! of SSIM and PSNR per dose and arm. `fig4.csv` holds Dice, HD95 and ASD per
//! dose, arm and tumor region with 95% t-interval half-widths.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use lowdose_core::metrics::{Arm, EvalRecord, Region};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::AppResult;
use crate::tables::{csv_bytes, UNDEFINED};

pub const TABLE4_HEADER: [&str; 10] =
    ["beta", "arm", "n", "ssim_mean", "ssim_sd", "psnr_mean", "psnr_sd", "psnr_inf", "ssim_star", "psnr_star"];
pub const FIG4_HEADER: [&str; 8] = ["beta", "arm", "region", "metric", "n", "mean", "sd", "ci95_half"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Mean and sample sd; a single value has sd 0. `None` for no values.
pub fn summarize(xs: &[f64]) -> Option<Summary> {
    let n = xs.len();
    if n == 0 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Some(Summary { n, mean, sd })
}

/// Half-width of the two-sided 95% t-interval for the mean.
pub fn ci95_half_width(s: &Summary) -> f64 {
    if s.n < 2 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, (s.n - 1) as f64).expect("positive degrees of freedom");
    t.inverse_cdf(0.975) * s.sd / (s.n as f64).sqrt()
}

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

fn cell(s: Option<Summary>) -> (String, String) {
    match s {
        Some(s) => (fixed(s.mean), fixed(s.sd)),
        None => (UNDEFINED.into(), UNDEFINED.into()),
    }
}

type Groups<'a> = BTreeMap<(u32, Arm), Vec<&'a EvalRecord>>;

fn group(records: &[EvalRecord]) -> Groups<'_> {
    let mut g: Groups = BTreeMap::new();
    for r in records {
        g.entry((r.beta_percent, r.arm)).or_default().push(r);
    }
    g
}

/// `stars` lists `(metric, beta)` cells marked significant. Stars go on the
/// restored row.
pub fn table4(records: &[EvalRecord], stars: &BTreeSet<(String, u32)>) -> AppResult<Vec<u8>> {
    let rows = group(records).into_iter().map(|((beta, arm), rs)| {
        let ssim: Vec<f64> = rs.iter().map(|r| r.ssim).collect();
        let psnr: Vec<f64> = rs.iter().map(|r| r.psnr_db).filter(|p| p.is_finite()).collect();
        let (sm, ss) = cell(summarize(&ssim));
        let (pm, ps) = cell(summarize(&psnr));
        let star = |m: &str| {
            if arm == Arm::Restored && stars.contains(&(m.to_string(), beta)) { "*" } else { "" }.to_string()
        };
        [
            beta.to_string(),
            arm.as_str().to_string(),
            rs.len().to_string(),
            sm,
            ss,
            pm,
            ps,
            (rs.len() - psnr.len()).to_string(),
            star("ssim"),
            star("psnr_db"),
        ]
    });
    csv_bytes(&TABLE4_HEADER, rows)
}

/// One aggregated point of the segmentation figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig4Point {
    pub beta: u32,
    pub arm: Arm,
    pub region: Region,
    pub metric: &'static str,
    pub summary: Option<Summary>,
}

pub fn fig4_points(records: &[EvalRecord]) -> Vec<Fig4Point> {
    let mut out = Vec::new();
    for ((beta, arm), rs) in group(records) {
        for (i, region) in Region::ALL.into_iter().enumerate() {
            let dice: Vec<f64> = rs.iter().map(|r| r.dice[i]).collect();
            let hd: Vec<f64> = rs.iter().filter_map(|r| r.hd95_mm[i]).collect();
            let asd: Vec<f64> = rs.iter().filter_map(|r| r.asd_mm[i]).collect();
            for (metric, xs) in [("dice", dice), ("hd95_mm", hd), ("asd_mm", asd)] {
                out.push(Fig4Point { beta, arm, region, metric, summary: summarize(&xs) });
            }
        }
    }
    out
}

pub fn fig4(records: &[EvalRecord]) -> AppResult<Vec<u8>> {
    let rows = fig4_points(records).into_iter().map(|p| {
        let (n, mean, sd, ci) = match p.summary {
            Some(s) => (s.n.to_string(), fixed(s.mean), fixed(s.sd), fixed(ci95_half_width(&s))),
            None => ("0".into(), UNDEFINED.into(), UNDEFINED.into(), UNDEFINED.into()),
        };
        [p.beta.to_string(), p.arm.as_str().into(), p.region.suffix().into(), p.metric.into(), n, mean, sd, ci]
    });
    csv_bytes(&FIG4_HEADER, rows)
}

/// Line plot of one metric against dose for both arms, whole tumor, with
/// CI error bars.
pub fn fig4_svg(records: &[EvalRecord], metric: &str) -> String {
    let pts: Vec<Fig4Point> = fig4_points(records)
        .into_iter()
        .filter(|p| p.metric == metric && p.region == Region::Whole && p.summary.is_some())
        .collect();
    let (w, h, m) = (480.0, 320.0, 48.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let _ = writeln!(svg, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{metric} (whole tumor)</text>", w / 2.0);
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let lo_hi = |p: &Fig4Point| {
        let s = p.summary.unwrap();
        let c = ci95_half_width(&s);
        (s.mean - c, s.mean + c)
    };
    let ymin = pts.iter().map(|p| lo_hi(p).0).fold(f64::INFINITY, f64::min);
    let ymax = pts.iter().map(|p| lo_hi(p).1).fold(f64::NEG_INFINITY, f64::max);
    let (ymin, ymax) = if ymax > ymin { (ymin, ymax) } else { (ymin - 0.5, ymax + 0.5) };
    let sx = |b: u32| m + (w - 2.0 * m) * b as f64 / 100.0;
    let sy = |v: f64| h - m - (h - 2.0 * m) * (v - ymin) / (ymax - ymin);
    let _ = writeln!(svg, "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", h - m, w - m, h - m);
    let _ = writeln!(svg, "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>", h - m);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">dose (%)</text>", w / 2.0, h - 12.0);
    let _ = writeln!(svg, "<text x=\"4\" y=\"{}\" font-size=\"10\">{ymax:.3}</text>", m);
    let _ = writeln!(svg, "<text x=\"4\" y=\"{}\" font-size=\"10\">{ymin:.3}</text>", h - m);
    for (arm, colour) in [(Arm::LowDose, "#d62728"), (Arm::Restored, "#1f77b4")] {
        let line: Vec<&Fig4Point> = pts.iter().filter(|p| p.arm == arm).collect();
        let path: Vec<String> =
            line.iter().map(|p| format!("{:.2},{:.2}", sx(p.beta), sy(p.summary.unwrap().mean))).collect();
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
        for p in line {
            let (a, b) = lo_hi(p);
            let x = sx(p.beta);
            let _ = writeln!(svg, "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{colour}\"/>", sy(a), sy(b));
        }
        let ly = if arm == Arm::LowDose { 36.0 } else { 50.0 };
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{ly}\" font-size=\"11\" fill=\"{colour}\">{}</text>", w - m - 70.0, arm.as_str());
    }
    svg.push_str("</svg>\n");
    svg
}
