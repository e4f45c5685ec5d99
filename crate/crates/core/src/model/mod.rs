//! Restoration network.
//!
//! A small convolutional encoder turns the input patch into `m` modulation
//! channels per pixel. A coordinate MLP then predicts one intensity per pixel
//! from the pixel's normalized `(row, col)` position; every hidden layer's
//! pre-activation is shifted by a linear projection of that pixel's
//! modulation code. With `residual` set the network predicts a correction that
//! is added to the first input channel.
//!
//! Parameters are stored as `f32`. Forward and backward passes run in `f64`.

mod adam;
mod discriminator;
mod generator;
mod layers;
mod loss;
mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{CoordGrid, Plane, Stack};
use crate::infer::PatchModel;
use crate::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use discriminator::{DiscArch, Discriminator};
pub use generator::Generator;
pub use loss::{batch_gradients, batch_loss, discriminator_gradients, l1_subgradient, loss, LossParts, LossWeights, Sample};
pub use train::{
    augment_pair, train, train_with_observer, Augment, StepRecord, TrainConfig, TrainHistory, TrainPair,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Encoder convolution layers `C`.
    pub enc_layers: usize,
    /// Modulation channels `m`.
    pub mod_channels: usize,
    /// Decoder fully connected layers `D`, including the output layer.
    pub dec_layers: usize,
    /// Decoder hidden width `h`.
    pub hidden: usize,
    /// Input channels: 1 (low-dose) or 2 (low-dose and T1).
    pub channels: usize,
    /// Add the first input channel to the decoder output.
    pub residual: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { enc_layers: 2, mod_channels: 8, dec_layers: 3, hidden: 32, channels: 1, residual: true }
    }
}

/// One named tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Included in the l2 penalty (weights yes, biases no).
    pub decay: bool,
    /// Fan-in used for initialization.
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

pub(crate) struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    offset: usize,
}

impl LayoutBuilder {
    pub(crate) fn new() -> Self {
        LayoutBuilder { specs: Vec::new(), offset: 0 }
    }

    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, decay: bool, fan_in: usize) -> usize {
        let spec = TensorSpec { name, shape, offset: self.offset, decay, fan_in };
        let off = self.offset;
        self.offset += spec.len();
        self.specs.push(spec);
        off
    }

    pub(crate) fn finish(self) -> Vec<TensorSpec> {
        self.specs
    }
}

/// Offsets of every generator tensor in the flat vector.
#[derive(Debug, Clone)]
pub(crate) struct GenLayout {
    /// `(weight, bias)` per encoder layer; weight is `[out][in][3][3]`.
    pub enc: Vec<(usize, usize)>,
    /// `(weight, bias)` per decoder layer; weight is `[out][in]`.
    pub dec: Vec<(usize, usize)>,
    /// Modulation matrices `[h][m]`, one per hidden layer.
    pub modulation: Vec<usize>,
    pub specs: Vec<TensorSpec>,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let zero = [
            ("enc_layers", self.enc_layers),
            ("mod_channels", self.mod_channels),
            ("hidden", self.hidden),
            ("channels", self.channels),
        ]
        .into_iter()
        .find(|(_, v)| *v == 0);
        if let Some((name, _)) = zero {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.dec_layers < 2 {
            return Err(Error::Config("dec_layers must be at least 2".into()));
        }
        if self.channels > 2 {
            return Err(Error::Config(format!("channels must be 1 or 2, got {}", self.channels)));
        }
        Ok(())
    }

    pub(crate) fn gen_layout(&self) -> GenLayout {
        let (m, h) = (self.mod_channels, self.hidden);
        let mut b = LayoutBuilder::new();
        let mut enc = Vec::new();
        for k in 0..self.enc_layers {
            let cin = if k == 0 { self.channels } else { m };
            let w = b.push(format!("enc.{k}.weight"), alloc::vec![m, cin, 3, 3], true, cin * 9);
            let bias = b.push(format!("enc.{k}.bias"), alloc::vec![m], false, cin * 9);
            enc.push((w, bias));
        }
        let mut dec = Vec::new();
        for k in 0..self.dec_layers {
            let fan_in = if k == 0 { 2 } else { h };
            let out = if k + 1 == self.dec_layers { 1 } else { h };
            let w = b.push(format!("dec.{k}.weight"), alloc::vec![out, fan_in], true, fan_in);
            let bias = b.push(format!("dec.{k}.bias"), alloc::vec![out], false, fan_in);
            dec.push((w, bias));
        }
        let modulation =
            (0..self.dec_layers - 1).map(|k| b.push(format!("mod.{k}.weight"), alloc::vec![h, m], true, m)).collect();
        GenLayout { enc, dec, modulation, specs: b.finish() }
    }

    /// Generator tensors in storage order.
    pub fn layout(&self) -> Vec<TensorSpec> {
        self.gen_layout().specs
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(TensorSpec::len).sum()
    }
}

/// Name of the element at flat index `i`, e.g. `dec.1.weight[3]`.
pub fn element_path(specs: &[TensorSpec], i: usize) -> String {
    specs
        .iter()
        .find(|s| s.range().contains(&i))
        .map(|s| format!("{}[{}]", s.name, i - s.offset))
        .unwrap_or_else(|| format!("param[{i}]"))
}

pub(crate) fn init_values(specs: &[TensorSpec], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(specs.iter().map(TensorSpec::len).sum());
    for s in specs {
        let bound = 1.0 / libm::sqrt(s.fan_in as f64);
        for _ in 0..s.len() {
            out.push(rng.gen_range(-bound..bound) as f32);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub generator: Vec<f32>,
    /// Present only for adversarially trained models.
    pub discriminator: Option<(DiscArch, Vec<f32>)>,
}

impl ModelParams {
    pub fn new(arch: ArchConfig, generator: Vec<f32>, discriminator: Option<(DiscArch, Vec<f32>)>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.param_count();
        if generator.len() != expected {
            return Err(Error::InvalidShape(format!(
                "architecture needs {expected} generator parameters, got {}",
                generator.len()
            )));
        }
        if let Some((d, w)) = &discriminator {
            if w.len() != d.param_count() {
                return Err(Error::InvalidShape(format!(
                    "discriminator needs {} parameters, got {}",
                    d.param_count(),
                    w.len()
                )));
            }
        }
        let specs = arch.layout();
        if let Some(i) = generator.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { path: element_path(&specs, i) });
        }
        Ok(ModelParams { arch, generator, discriminator })
    }

    pub fn generator_f64(&self) -> Vec<f64> {
        self.generator.iter().map(|&v| v as f64).collect()
    }

    pub fn network(&self) -> Generator {
        Generator::new(self.arch, self.generator_f64())
    }
}

/// Seeded uniform fan-in initialization, bound `1/sqrt(fan_in)`.
pub fn init_model(arch: &ArchConfig, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = init_values(&arch.layout(), &mut rng);
    ModelParams::new(*arch, values, None)
}

pub fn forward(p: &ModelParams, patch: &Stack, coords: &CoordGrid) -> Result<Plane> {
    p.network().forward(patch, coords)
}

/// Prediction for the pixels in `rows x cols` only. The encoder still sees
/// the whole patch, so this equals the matching window of [`forward`].
pub fn forward_region(
    p: &ModelParams,
    patch: &Stack,
    coords: &CoordGrid,
    rows: Range<usize>,
    cols: Range<usize>,
) -> Result<Plane> {
    p.network().forward_region(patch, coords, rows, cols)
}

impl PatchModel for ModelParams {
    fn channels(&self) -> usize {
        self.arch.channels
    }

    fn predict(&self, input: &Stack, coords: &CoordGrid) -> Result<Plane> {
        forward(self, input, coords)
    }
}

#[cfg(test)]
mod tests;
