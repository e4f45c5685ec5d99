use alloc::vec;
use alloc::vec::Vec;

use super::discriminator::{DiscArch, Discriminator};
use super::generator::Generator;
use super::{ModelParams, TensorSpec};
use crate::grid::{CoordGrid, Plane, Stack};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_reg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub l1: f64,
    pub adv: f64,
    pub reg: f64,
}

/// One training example: input channels and the standard-dose target patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Stack,
    pub target: Plane,
}

/// `d|x|/dx` with the value at 0 taken as 0.
pub fn l1_subgradient(diff: f64) -> f64 {
    if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn reg_sum(specs: &[TensorSpec], w: &[f64]) -> f64 {
    specs.iter().filter(|s| s.decay).flat_map(|s| &w[s.range()]).map(|v| v * v).sum()
}

fn check_pair(pred: &Plane, target: &Plane) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Mismatch(alloc::format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

fn adversarial_disc<'a>(disc: Option<(DiscArch, &'a [f64])>, lw: &LossWeights) -> Result<Option<Discriminator<'a>>> {
    if lw.lambda_adv == 0.0 {
        return Ok(None);
    }
    match disc {
        Some((a, w)) => Ok(Some(Discriminator::new(a, w))),
        None => Err(Error::Config("lambda_adv > 0 needs a discriminator".into())),
    }
}

fn lsgan_generator_term(scores: &[f64]) -> f64 {
    scores.iter().map(|s| (s - 1.0) * (s - 1.0)).sum::<f64>() / scores.len() as f64
}

/// Loss of a single prediction against its target.
pub fn loss(pred: &Plane, target: &Plane, p: &ModelParams, lw: &LossWeights) -> Result<LossParts> {
    check_pair(pred, target)?;
    let n = pred.data().len() as f64;
    let l1 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let reg = lw.lambda_reg * reg_sum(&p.arch.layout(), &p.generator_f64());
    let dw: Option<(DiscArch, Vec<f64>)> =
        p.discriminator.as_ref().map(|(a, w)| (*a, w.iter().map(|&v| v as f64).collect()));
    let adv = match adversarial_disc(dw.as_ref().map(|(a, w)| (*a, w.as_slice())), lw)? {
        Some(d) => lw.lambda_adv * lsgan_generator_term(&d.forward(pred)),
        None => 0.0,
    };
    Ok(LossParts { total: l1 + adv + reg, l1, adv, reg })
}

fn batch_pixels(batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    Ok(batch.iter().map(|s| s.target.data().len()).sum::<usize>() as f64)
}

/// Batch loss: l1 averaged over every pixel of the batch, adversarial term
/// averaged over samples.
pub fn batch_loss(
    gen: &Generator,
    disc: Option<(DiscArch, &[f64])>,
    batch: &[Sample],
    lw: &LossWeights,
) -> Result<LossParts> {
    let npix = batch_pixels(batch)?;
    let d = adversarial_disc(disc, lw)?;
    let mut parts = LossParts::default();
    for s in batch {
        let coords = CoordGrid::regular(s.input.rows(), s.input.cols());
        let pred = gen.forward(&s.input, &coords)?;
        check_pair(&pred, &s.target)?;
        parts.l1 += pred.data().iter().zip(s.target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        if let Some(d) = &d {
            parts.adv += lsgan_generator_term(&d.forward(&pred));
        }
    }
    parts.l1 /= npix;
    parts.adv *= lw.lambda_adv / batch.len() as f64;
    parts.reg = lw.lambda_reg * reg_sum(&gen.layout().specs, gen.weights());
    parts.total = parts.l1 + parts.adv + parts.reg;
    Ok(parts)
}

/// Batch loss, its gradient with respect to the generator weights, and the
/// predictions.
pub fn batch_gradients(
    gen: &Generator,
    disc: Option<(DiscArch, &[f64])>,
    batch: &[Sample],
    lw: &LossWeights,
) -> Result<(LossParts, Vec<f64>, Vec<Plane>)> {
    let npix = batch_pixels(batch)?;
    let d = adversarial_disc(disc, lw)?;
    let w = gen.weights();
    let mut grad = vec![0.0; w.len()];
    let mut parts = LossParts::default();
    let mut preds = Vec::with_capacity(batch.len());
    let adv_scale = lw.lambda_adv / batch.len() as f64;
    for s in batch {
        let coords = CoordGrid::regular(s.input.rows(), s.input.cols());
        let (pred, cache) = gen.forward_train(&s.input, &coords)?;
        check_pair(&pred, &s.target)?;
        let mut dout: Vec<f64> = pred
            .data()
            .iter()
            .zip(s.target.data())
            .map(|(a, b)| {
                parts.l1 += (a - b).abs();
                l1_subgradient(a - b) / npix
            })
            .collect();
        if let Some(d) = &d {
            let (scores, dcache) = d.forward_cached(&pred);
            parts.adv += lsgan_generator_term(&scores);
            let ns = scores.len() as f64;
            let dscore: Vec<f64> = scores.iter().map(|s| adv_scale * 2.0 * (s - 1.0) / ns).collect();
            // parameter gradients of D are not wanted here
            let mut scratch = vec![0.0; d.weight_count()];
            let dimg = d.backward(&dcache, &dscore, &mut scratch);
            dout.iter_mut().zip(&dimg).for_each(|(a, b)| *a += b);
        }
        gen.backward(&s.input, &coords, &cache, &dout, &mut grad);
        preds.push(pred);
    }
    parts.l1 /= npix;
    parts.adv *= adv_scale;
    for s in gen.layout().specs.iter().filter(|s| s.decay) {
        for i in s.range() {
            parts.reg += w[i] * w[i];
            grad[i] += 2.0 * lw.lambda_reg * w[i];
        }
    }
    parts.reg *= lw.lambda_reg;
    parts.total = parts.l1 + parts.adv + parts.reg;
    Ok((parts, grad, preds))
}

/// Least-squares discriminator loss
/// `0.5 * (mean (D(real) - 1)^2 + mean D(fake)^2)`, averaged over the batch,
/// with its parameter gradient.
pub fn discriminator_gradients(arch: DiscArch, w: &[f64], fakes: &[Plane], reals: &[Plane]) -> (f64, Vec<f64>) {
    let d = Discriminator::new(arch, w);
    let mut grad = vec![0.0; w.len()];
    let mut total = 0.0;
    let n = (fakes.len() + reals.len()).max(1) as f64 / 2.0;
    for (img, label) in fakes.iter().map(|f| (f, 0.0)).chain(reals.iter().map(|r| (r, 1.0))) {
        let (scores, cache) = d.forward_cached(img);
        let ns = scores.len() as f64;
        total += 0.5 * scores.iter().map(|s| (s - label) * (s - label)).sum::<f64>() / ns / n;
        let ds: Vec<f64> = scores.iter().map(|s| (s - label) / ns / n).collect();
        d.backward(&cache, &ds, &mut grad);
    }
    (total, grad)
}
