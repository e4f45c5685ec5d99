use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::discriminator::DiscArch;
use super::generator::Generator;
use super::loss::{batch_gradients, discriminator_gradients, LossWeights, Sample};
use super::{element_path, init_model, ArchConfig, ModelParams};
use crate::grid::{Plane, Stack};
use crate::infer::slice_channels;
use crate::volume::{BoundingBox, Volume};
use crate::{Error, Result};

/// Value written into pixels uncovered by a shift (the normalized minimum).
const SHIFT_FILL: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augment {
    pub flip_h: bool,
    pub flip_v: bool,
    pub shift_max_px: usize,
    /// Random patch origin; when off the patch is taken from the slice center.
    pub crop: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Augment { flip_h: true, flip_v: true, shift_max_px: 2, crop: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda_adv: f64,
    pub lambda_reg: f64,
    pub steps: usize,
    pub batch: usize,
    pub patch_hw: (usize, usize),
    pub seed: u64,
    pub augment: Augment,
    /// Probability that a sampled patch is placed over the pair's region of
    /// interest (when the pair has one).
    pub roi_focus: f64,
    pub disc: DiscArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_g: 1e-4,
            lr_d: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda_adv: 0.0,
            lambda_reg: 1e-5,
            steps: 2000,
            batch: 4,
            patch_hw: (32, 40),
            seed: 0,
            augment: Augment::default(),
            roi_focus: 0.5,
            disc: DiscArch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr_g", self.lr_g)?;
        positive("lr_d", self.lr_d)?;
        positive("eps", self.eps)?;
        for (name, v) in [("lambda_adv", self.lambda_adv), ("lambda_reg", self.lambda_reg)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.roi_focus) {
            return Err(Error::Config(format!("roi_focus must be in [0, 1], got {}", self.roi_focus)));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be at least 1".into()));
        }
        if self.patch_hw.0 == 0 || self.patch_hw.1 == 0 {
            return Err(Error::Config("patch must be non-empty".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda_adv: self.lambda_adv, lambda_reg: self.lambda_reg }
    }
}

/// One training volume pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub input: Volume,
    pub target: Volume,
    pub aux: Option<Volume>,
    /// Region the sampler favors, usually the lesion box.
    pub roi: Option<BoundingBox>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub l1: f64,
    pub adv: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

/// Flips then shifts input channels and target the same way.
pub fn augment_pair(
    channels: &[Plane],
    target: &Plane,
    flip_h: bool,
    flip_v: bool,
    shift: (isize, isize),
) -> (Vec<Plane>, Plane) {
    let apply = |p: &Plane| {
        let mut q = p.clone();
        if flip_h {
            q = q.flip_horizontal();
        }
        if flip_v {
            q = q.flip_vertical();
        }
        if shift != (0, 0) {
            q = q.shifted(shift.0, shift.1, SHIFT_FILL);
        }
        q
    };
    (channels.iter().map(apply).collect(), apply(target))
}

struct SlicePair {
    channels: Vec<Plane>,
    target: Plane,
}

struct Prepared {
    slices: Vec<SlicePair>,
    roi: Option<BoundingBox>,
}

fn prepare(data: &[TrainPair], arch: &ArchConfig, patch: (usize, usize)) -> Result<Vec<Prepared>> {
    if data.is_empty() {
        return Err(Error::Dataset("no training pairs".into()));
    }
    data.iter()
        .enumerate()
        .map(|(i, p)| {
            p.input.ensure_aligned(&p.target)?;
            if let Some(a) = &p.aux {
                p.input.ensure_aligned(a)?;
            }
            if arch.channels != 1 + p.aux.is_some() as usize {
                return Err(Error::Mismatch(format!(
                    "pair {i}: model takes {} channel(s) but aux T1 is {}",
                    arch.channels,
                    if p.aux.is_some() { "present" } else { "absent" }
                )));
            }
            let [nx, ny, nz] = p.input.dims();
            if ny < patch.0 || nx < patch.1 {
                return Err(Error::Dataset(format!(
                    "pair {i}: {ny}x{nx} slices are smaller than the {}x{} patch",
                    patch.0, patch.1
                )));
            }
            if let Some(r) = &p.roi {
                if !r.fits(p.input.dims()) {
                    return Err(Error::OutOfRange(format!("pair {i}: ROI {r:?} outside volume")));
                }
            }
            let slices = (0..nz)
                .map(|z| SlicePair {
                    channels: slice_channels(&p.input, p.aux.as_ref(), z),
                    target: slice_channels(&p.target, None, z).remove(0),
                })
                .collect();
            Ok(Prepared { slices, roi: p.roi })
        })
        .collect()
}

fn sample(data: &[Prepared], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let pair = &data[rng.gen_range(0..data.len())];
    let (ph, pw) = cfg.patch_hw;
    let focus = pair.roi.filter(|_| cfg.roi_focus > 0.0 && rng.gen_bool(cfg.roi_focus));
    let z = match focus {
        Some(r) => rng.gen_range(r.min[2]..=r.max[2]),
        None => rng.gen_range(0..pair.slices.len()),
    };
    let sp = &pair.slices[z];
    let (rows, cols) = sp.target.shape();
    let aug = cfg.augment;
    let flip_h = aug.flip_h && rng.gen_bool(0.5);
    let flip_v = aug.flip_v && rng.gen_bool(0.5);
    let s = aug.shift_max_px as isize;
    let shift = if s > 0 { (rng.gen_range(-s..=s), rng.gen_range(-s..=s)) } else { (0, 0) };
    let (channels, target) = augment_pair(&sp.channels, &sp.target, flip_h, flip_v, shift);

    // where the ROI center ended up after augmentation
    let center = focus.map(|r| {
        let mut cr = (r.min[1] + r.max[1]) as isize / 2;
        let mut cc = (r.min[0] + r.max[0]) as isize / 2;
        if flip_h {
            cc = cols as isize - 1 - cc;
        }
        if flip_v {
            cr = rows as isize - 1 - cr;
        }
        (
            (cr + shift.0).clamp(0, rows as isize - 1) as usize,
            (cc + shift.1).clamp(0, cols as isize - 1) as usize,
        )
    });
    let range = |n: usize, p: usize, c: Option<usize>| match c {
        Some(c) => (c + 1).saturating_sub(p)..=c.min(n - p),
        None => 0..=n - p,
    };
    let (r0, c0) = if aug.crop {
        (
            rng.gen_range(range(rows, ph, center.map(|c| c.0))),
            rng.gen_range(range(cols, pw, center.map(|c| c.1))),
        )
    } else {
        ((rows - ph) / 2, (cols - pw) / 2)
    };
    let patches: Vec<Plane> = channels.iter().map(|p| p.window(r0, c0, ph, pw)).collect();
    Ok(Sample { input: Stack::from_planes(&patches)?, target: target.window(r0, c0, ph, pw) })
}

pub fn train(data: &[TrainPair], arch: &ArchConfig, cfg: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_with_observer(data, arch, cfg, &mut |_| {})
}

/// [`train`], calling `observer` after every step.
pub fn train_with_observer(
    data: &[TrainPair],
    arch: &ArchConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    arch.validate()?;
    let prepared = prepare(data, arch, cfg.patch_hw)?;
    let init = init_model(arch, cfg.seed)?;
    let mut gen = Generator::new(*arch, init.generator_f64());
    let specs = arch.layout();
    let adam = |lr| AdamConfig { lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps };
    let mut opt_g = Adam::new(adam(cfg.lr_g), specs.iter().map(|s| s.len()).sum());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut disc = if cfg.lambda_adv > 0.0 {
        let mut drng = ChaCha8Rng::seed_from_u64(cfg.seed);
        drng.set_stream(2);
        let w: Vec<f64> = cfg.disc.init(&mut drng).into_iter().map(|v| v as f64).collect();
        let opt = Adam::new(adam(cfg.lr_d), w.len());
        Some((w, opt))
    } else {
        None
    };
    let lw = cfg.loss_weights();

    let mut history = TrainHistory { records: Vec::with_capacity(cfg.steps) };
    for step in 0..cfg.steps {
        let batch = (0..cfg.batch).map(|_| sample(&prepared, cfg, &mut rng)).collect::<Result<Vec<_>>>()?;
        let d = disc.as_ref().map(|(w, _)| (cfg.disc, w.as_slice()));
        let (parts, grad, preds) = batch_gradients(&gen, d, &batch, &lw)?;
        if !parts.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { path: element_path(&specs, i) });
        }
        opt_g.step(gen.weights_mut(), &grad);
        if let Some((w, opt)) = disc.as_mut() {
            let reals: Vec<Plane> = batch.iter().map(|s| s.target.clone()).collect();
            let (dloss, dgrad) = discriminator_gradients(cfg.disc, w, &preds, &reals);
            if !dloss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            if let Some(i) = dgrad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { path: element_path(&cfg.disc.layout(), i) });
            }
            opt.step(w, &dgrad);
        }
        let rec = StepRecord { step, l1: parts.l1, adv: parts.adv, reg: parts.reg, total: parts.total };
        observer(&rec);
        history.records.push(rec);
    }

    let to_f32 = |w: &[f64]| w.iter().map(|&v| v as f32).collect::<Vec<f32>>();
    let params = ModelParams::new(*arch, to_f32(gen.weights()), disc.map(|(w, _)| (cfg.disc, to_f32(&w))))?;
    Ok((params, history))
}
