//! Experiment configuration: one TOML file, dotted keys overridable from the
//! command line with `--set section.key=value`.
//!
//! ```toml
//! seed = 42
//!
//! [paths]
//! data_dir = ""        # existing cohort from `phantom-gen`; empty generates one
//! work_dir = "run"
//!
//! [cohort]
//! phantoms = 25
//!
//! [doses]
//! betas = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90]
//!
//! [model]
//! enc_layers = 2
//! mod_channels = 8
//! dec_layers = 3
//! hidden = 32
//! channels = 1         # 2 stacks the normalized T1 as a second input
//! residual = true
//!
//! [train]
//! lr_g = 1e-4
//! lr_d = 4e-4          # discriminator, used only when lambda_adv > 0
//! steps = 2000
//! batch = 4
//! patch = [32, 40]
//! lambda_adv = 0.0
//! lambda_reg = 1e-5
//! roi_focus = 0.5
//!
//! [infer]
//! patch = [32, 40]
//! sigma_frac = 0.125
//!
//! [metrics]
//! threshold_frac = 0.5
//! roi_margin = 3
//!
//! [report]
//! svg = true
//! ```
//!
//! Every key is optional. The training seed for dose `b` is `seed + b`.

use std::path::{Path, PathBuf};

use lowdose_core::model::{ArchConfig, Augment, DiscArch, TrainConfig};
use lowdose_core::simulate::{dose_grid, DoseFraction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub cohort: Cohort,
    pub doses: Doses,
    pub model: Model,
    pub train: Train,
    pub infer: Infer,
    pub metrics: Metrics,
    pub report: Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: String,
    pub work_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cohort {
    pub phantoms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Doses {
    pub betas: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Model {
    pub enc_layers: usize,
    pub mod_channels: usize,
    pub dec_layers: usize,
    pub hidden: usize,
    pub channels: usize,
    pub residual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Train {
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch: usize,
    pub patch: [usize; 2],
    pub lambda_adv: f64,
    pub lambda_reg: f64,
    pub roi_focus: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub shift_max_px: usize,
    pub crop: bool,
    pub disc_widths: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Infer {
    pub patch: [usize; 2],
    pub sigma_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Metrics {
    pub threshold_frac: f64,
    pub roi_margin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Report {
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            paths: Paths::default(),
            cohort: Cohort::default(),
            doses: Doses::default(),
            model: Model::default(),
            train: Train::default(),
            infer: Infer::default(),
            metrics: Metrics::default(),
            report: Report::default(),
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Paths { data_dir: String::new(), work_dir: "run".into() }
    }
}

impl Default for Cohort {
    fn default() -> Self {
        Cohort { phantoms: 25 }
    }
}

impl Default for Doses {
    fn default() -> Self {
        Doses { betas: dose_grid().into_iter().map(DoseFraction::percent).collect() }
    }
}

impl Default for Model {
    fn default() -> Self {
        let a = ArchConfig::default();
        Model {
            enc_layers: a.enc_layers,
            mod_channels: a.mod_channels,
            dec_layers: a.dec_layers,
            hidden: a.hidden,
            channels: a.channels,
            residual: a.residual,
        }
    }
}

impl Default for Train {
    fn default() -> Self {
        let t = TrainConfig::default();
        Train {
            lr_g: t.lr_g,
            lr_d: t.lr_d,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            steps: t.steps,
            batch: t.batch,
            patch: [t.patch_hw.0, t.patch_hw.1],
            lambda_adv: t.lambda_adv,
            lambda_reg: t.lambda_reg,
            roi_focus: t.roi_focus,
            flip_h: t.augment.flip_h,
            flip_v: t.augment.flip_v,
            shift_max_px: t.augment.shift_max_px,
            crop: t.augment.crop,
            disc_widths: t.disc.widths,
        }
    }
}

impl Default for Infer {
    fn default() -> Self {
        Infer { patch: [32, 40], sigma_frac: lowdose_core::infer::DEFAULT_SIGMA_FRAC }
    }
}

impl Default for Metrics {
    fn default() -> Self {
        let s = lowdose_core::metrics::SegmenterConfig::new(0.0);
        Metrics { threshold_frac: s.threshold_frac, roi_margin: s.roi_margin }
    }
}

impl Default for Report {
    fn default() -> Self {
        Report { svg: true }
    }
}

fn config_err(msg: impl Into<String>) -> AppError {
    AppError::Config(msg.into())
}

/// Sets a dotted key in a TOML table. The value is read as TOML, falling
/// back to a plain string.
fn set_dotted(table: &mut toml::Table, key: &str, raw: &str) -> AppResult<()> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| config_err(format!("empty key in {key:?}")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_err(format!("{p} in {key:?} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses `text` and applies `key=value` overrides in order.
    pub fn from_toml(text: &str, overrides: &[String]) -> AppResult<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| config_err(format!("override {o:?} is not key=value")))?;
            set_dotted(&mut table, k.trim(), v.trim())?;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> AppResult<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.doses.betas.is_empty() {
            return Err(config_err("doses.betas is empty"));
        }
        let grid: Vec<u32> = dose_grid().into_iter().map(DoseFraction::percent).collect();
        for b in &self.doses.betas {
            if !grid.contains(b) && *b != 100 {
                return Err(config_err(format!("dose {b} is not on the grid {grid:?}")));
            }
        }
        let mut sorted = self.doses.betas.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.doses.betas.len() {
            return Err(config_err("doses.betas has duplicates"));
        }
        self.arch().validate()?;
        self.train_config(0).validate()?;
        if self.data_dir().is_none() && self.cohort.phantoms < 2 {
            return Err(config_err("cohort.phantoms must be at least 2 when no data_dir is given"));
        }
        if let Some(d) = self.data_dir() {
            if !d.is_dir() {
                return Err(config_err(format!("data_dir {} does not exist", d.display())));
            }
        }
        let [ph, pw] = self.infer.patch;
        if ph < 2 || pw < 2 || ph % 2 != 0 || pw % 2 != 0 {
            return Err(config_err(format!("infer.patch must be even and >= 2, got {ph}x{pw}")));
        }
        if !(self.infer.sigma_frac > 0.0) {
            return Err(config_err("infer.sigma_frac must be positive"));
        }
        if !(0.0..=1.0).contains(&self.metrics.threshold_frac) {
            return Err(config_err("metrics.threshold_frac must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> Option<PathBuf> {
        (!self.paths.data_dir.is_empty()).then(|| PathBuf::from(&self.paths.data_dir))
    }

    pub fn work_dir(&self) -> PathBuf {
        PathBuf::from(&self.paths.work_dir)
    }

    pub fn arch(&self) -> ArchConfig {
        let m = &self.model;
        ArchConfig {
            enc_layers: m.enc_layers,
            mod_channels: m.mod_channels,
            dec_layers: m.dec_layers,
            hidden: m.hidden,
            channels: m.channels,
            residual: m.residual,
        }
    }

    pub fn train_config(&self, beta: u32) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr_g: t.lr_g,
            lr_d: t.lr_d,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            lambda_adv: t.lambda_adv,
            lambda_reg: t.lambda_reg,
            steps: t.steps,
            batch: t.batch,
            patch_hw: (t.patch[0], t.patch[1]),
            seed: self.seed.wrapping_add(beta as u64),
            augment: Augment { flip_h: t.flip_h, flip_v: t.flip_v, shift_max_px: t.shift_max_px, crop: t.crop },
            roi_focus: t.roi_focus,
            disc: DiscArch { widths: t.disc_widths },
        }
    }

    /// Canonical TOML of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Self::canonical`], hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
