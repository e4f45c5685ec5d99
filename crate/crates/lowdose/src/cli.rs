//! Command line. Each subcommand is one pipeline stage; `run` chains them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lowdose_core::calibrate::{
    apply_calibration, calibrate_detailed, compute_histogram_range, DEFAULT_BINS, DEFAULT_SMOOTH_RADIUS,
};
use lowdose_core::infer::restore_volume;
use lowdose_core::metrics::{evaluate_image, Arm, SegmenterConfig};
use lowdose_core::model::train_with_observer;
use lowdose_core::phantom::{generate_cohort, CohortVariation};
use lowdose_core::simulate::{normalize_unit_range, simulate_low_dose, DoseFraction};
use lowdose_core::stats::significance_table;

use crate::checkpoint::{self, Checkpoint};
use crate::config::ExperimentConfig;
use crate::error::{AppError, AppResult, Context};
use crate::experiment::{self, load_cohort, prepare, train_pairs, write_cohort};
use crate::format::{encode_pgm, read_mask, read_volume, write_bytes, write_volume};
use crate::{report, tables};

#[derive(Debug, Parser)]
#[command(name = "lowdose", version, about = "Simulate, restore and score reduced-dose contrast MRI")]
pub struct Cli {
    /// Worker threads. Outputs are byte-identical only with 1.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with ground truth.
    PhantomGen(PhantomGenArgs),
    /// Estimate the T1ce-to-T1 intensity map.
    Calibrate(CalibrateArgs),
    /// Simulate reduced-dose images.
    Simulate(SimulateArgs),
    /// Train a restoration model for one dose.
    Train(TrainArgs),
    /// Restore a low-dose volume with a trained model.
    Restore(RestoreArgs),
    /// Score one image against the standard dose and append to metrics.csv.
    Evaluate(EvaluateArgs),
    /// Wilcoxon signed-rank tests from metrics.csv.
    Stats(StatsArgs),
    /// Summary tables from metrics.csv and significance.csv.
    Report(ReportArgs),
    /// Full experiment from a config file.
    Run(RunArgs),
    /// Export one slice as a 16-bit PGM.
    ExportPgm(ExportPgmArgs),
}

#[derive(Debug, Args)]
pub struct PhantomGenArgs {
    #[arg(long, default_value_t = 25)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub t1: PathBuf,
    #[arg(long)]
    pub t1ce: PathBuf,
    /// Map file (`scale=`, `offset=`).
    #[arg(long)]
    pub out: PathBuf,
    /// Histogram CSV over the joint intensity range.
    #[arg(long)]
    pub hist: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub t1: PathBuf,
    #[arg(long)]
    pub t1ce: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    /// Dose percentages, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub beta: Vec<u32>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, extra: &[String]) -> AppResult<ExperimentConfig> {
        let mut overrides = self.set.clone();
        overrides.extend_from_slice(extra);
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Cohort directory written by `phantom-gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub beta: u32,
    /// Checkpoint path; the history goes next to it as `<stem>_history.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Normalized T1 for two-channel models.
    #[arg(long)]
    pub aux_t1: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Patch size as HxW.
    #[arg(long, default_value = "32x40", value_parser = parse_hw)]
    pub patch: (usize, usize),
    #[arg(long, default_value_t = lowdose_core::infer::DEFAULT_SIGMA_FRAC)]
    pub sigma_frac: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Image under test.
    #[arg(long)]
    pub input: PathBuf,
    /// Standard-dose reference.
    #[arg(long)]
    pub reference: PathBuf,
    /// Ground-truth tumor labels.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub study_id: String,
    #[arg(long)]
    pub beta: u32,
    /// `low_dose` or `restored`.
    #[arg(long)]
    pub arm: String,
    /// Intrameatal split plane, mm along x.
    #[arg(long)]
    pub plane_mm: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold_frac: f64,
    #[arg(long, default_value_t = 3)]
    pub roi_margin: usize,
    /// metrics.csv; rows are appended when it exists.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub significance: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Generate this many phantoms instead of reading `paths.data_dir`.
    #[arg(long)]
    pub phantom: Option<usize>,
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    /// Print progress to stderr.
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct ExportPgmArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub slice: usize,
    /// Display window as LO,HI; defaults to the volume range.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub window: Option<Vec<f32>>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_hw(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad size {v:?}"));
    Ok((p(h)?, p(w)?))
}

fn toml_str(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

pub fn execute(cli: Cli) -> AppResult<()> {
    if cli.jobs == 0 {
        return Err(AppError::Config("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| AppError::Config(e.to_string()))?;
    pool.install(|| dispatch(cli.command, cli.jobs))
}

fn dispatch(cmd: Command, jobs: usize) -> AppResult<()> {
    match cmd {
        Command::PhantomGen(a) => phantom_gen(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Restore(a) => restore(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Stats(a) => stats(a),
        Command::Report(a) => report_cmd(a),
        Command::Run(a) => run(a, jobs),
        Command::ExportPgm(a) => export_pgm(a),
    }
}

fn phantom_gen(a: PhantomGenArgs) -> AppResult<()> {
    let studies = generate_cohort(a.n, a.seed, &CohortVariation::default())?;
    write_cohort(&a.out, &studies)
}

fn calibrate(a: CalibrateArgs) -> AppResult<()> {
    let t1 = read_volume(&a.t1)?;
    let t1ce = read_volume(&a.t1ce)?;
    let cal = calibrate_detailed(&t1, &t1ce, a.bins, DEFAULT_SMOOTH_RADIUS).context("calibrate")?;
    write_bytes(&a.out, tables::encode_map(&cal.map).as_bytes())?;
    if let Some(path) = a.hist {
        let (l1, h1) = t1.min_max();
        let (l2, h2) = t1ce.min_max();
        let (lo, hi) = (l1.min(l2) as f64, h1.max(h2) as f64);
        let ht1 = compute_histogram_range(&t1, a.bins, lo, hi)?;
        let ht1ce = compute_histogram_range(&t1ce, a.bins, lo, hi)?;
        write_bytes(&path, &tables::histogram_csv(&ht1, &ht1ce)?)?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> AppResult<()> {
    let t1 = read_volume(&a.t1)?;
    let map = tables::read_map(&a.map)?;
    let cal = apply_calibration(&read_volume(&a.t1ce)?, &map)?;
    let mut rows = Vec::new();
    for &b in &a.beta {
        let low = simulate_low_dose(&t1, &cal, DoseFraction::new(b)?).context(format!("simulate dose {b}"))?;
        let (norm, range) = normalize_unit_range(&low).context(format!("normalize dose {b}"))?;
        write_volume(&a.out_dir.join(format!("lowdose_b{b}.hdr")), &norm)?;
        rows.push((b, range.lo, range.hi));
    }
    let (std_norm, _) = normalize_unit_range(&cal).context("normalize standard dose")?;
    write_volume(&a.out_dir.join("standard.hdr"), &std_norm)?;
    let (t1_norm, _) = normalize_unit_range(&t1).context("normalize T1")?;
    write_volume(&a.out_dir.join("t1_norm.hdr"), &t1_norm)?;
    write_bytes(&a.out_dir.join("sim_manifest.csv"), &tables::sim_manifest_csv(&rows)?)
}

fn history_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    ckpt.with_file_name(format!("{stem}_history.csv"))
}

fn train(a: TrainArgs) -> AppResult<()> {
    let cfg = a.config.load(&[format!("paths.data_dir={}", toml_str(&a.data))])?;
    DoseFraction::new(a.beta)?;
    let studies: Vec<_> = load_cohort(&a.data)?.into_iter().map(prepare).collect::<AppResult<_>>()?;
    let arch = cfg.arch();
    let pairs = train_pairs(&studies, a.beta, arch.channels)?;
    if pairs.is_empty() {
        return Err(AppError::Data("cohort has no training studies".into()));
    }
    let tc = cfg.train_config(a.beta);
    let (params, history) = train_with_observer(&pairs, &arch, &tc, &mut |_| {}).context("train")?;
    checkpoint::save(&a.out, &Checkpoint { params, seed: tc.seed, steps: tc.steps })?;
    checkpoint::write_history(&history_path(&a.out), &history)
}

fn restore(a: RestoreArgs) -> AppResult<()> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let low = read_volume(&a.input)?;
    let aux = a.aux_t1.as_deref().map(read_volume).transpose()?;
    let out = restore_volume(&ck.params.network(), &low, aux.as_ref(), a.patch, a.sigma_frac).context("restore")?;
    write_volume(&a.out, &out)
}

fn evaluate(a: EvaluateArgs) -> AppResult<()> {
    let arm = Arm::parse(&a.arm).ok_or_else(|| AppError::Config(format!("arm must be low_dose or restored, got {:?}", a.arm)))?;
    let test = read_volume(&a.input)?;
    let reference = read_volume(&a.reference)?;
    let mask = read_mask(&a.mask)?;
    let seg = SegmenterConfig { threshold_frac: a.threshold_frac, roi_margin: a.roi_margin, meatus_plane_x_mm: a.plane_mm };
    let rec = evaluate_image(&a.study_id, a.beta, arm, &test, &reference, &mask, &seg)
        .context(format!("evaluate study {}", a.study_id))?;
    let mut records = if a.out.exists() { tables::read_metrics(&a.out)? } else { Vec::new() };
    if records.iter().any(|r| r.study_id == rec.study_id && r.beta_percent == rec.beta_percent && r.arm == rec.arm) {
        return Err(AppError::Data(format!(
            "{} already has study {} at dose {} ({})",
            a.out.display(),
            rec.study_id,
            rec.beta_percent,
            arm.as_str()
        )));
    }
    records.push(rec);
    tables::write_metrics(&a.out, &records)
}

fn stats(a: StatsArgs) -> AppResult<()> {
    let records = tables::read_metrics(&a.metrics)?;
    write_bytes(&a.out, &tables::significance_csv(&significance_table(&records))?)
}

fn report_cmd(a: ReportArgs) -> AppResult<()> {
    let records = tables::read_metrics(&a.metrics)?;
    let stars: BTreeSet<(String, u32)> = tables::read_significance_stars(&a.significance)?
        .into_iter()
        .filter(|(_, _, s)| *s)
        .map(|(m, b, _)| (m, b))
        .collect();
    write_bytes(&a.out_dir.join("table4.csv"), &report::table4(&records, &stars)?)?;
    write_bytes(&a.out_dir.join("fig4.csv"), &report::fig4(&records)?)?;
    if a.svg {
        for m in ["dice", "hd95_mm", "asd_mm"] {
            write_bytes(&a.out_dir.join(format!("fig4_{m}.svg")), report::fig4_svg(&records, m).as_bytes())?;
        }
    }
    Ok(())
}

fn run(a: RunArgs, jobs: usize) -> AppResult<()> {
    let mut extra = Vec::new();
    if let Some(n) = a.phantom {
        extra.push(format!("cohort.phantoms={n}"));
        extra.push("paths.data_dir=\"\"".into());
    }
    if let Some(w) = &a.work_dir {
        extra.push(format!("paths.work_dir={}", toml_str(w)));
    }
    let cfg = a.config.load(&extra)?;
    let verbose = a.verbose;
    let log = move |m: &str| {
        if verbose {
            eprintln!("{m}");
        }
    };
    let out = experiment::run_experiment(&cfg, jobs, &log)?;
    if verbose {
        eprintln!("wrote {} records to {}", out.records.len(), out.work_dir.display());
    }
    Ok(())
}

fn export_pgm(a: ExportPgmArgs) -> AppResult<()> {
    let v = read_volume(&a.input)?;
    let (lo, hi) = match a.window.as_deref() {
        Some([lo, hi]) => (*lo, *hi),
        _ => v.min_max(),
    };
    write_bytes(&a.out, &encode_pgm(&v, a.slice, lo, hi)?)
}
