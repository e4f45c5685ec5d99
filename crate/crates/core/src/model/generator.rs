use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::layers::Conv3;
use super::{ArchConfig, GenLayout};
use crate::grid::{CoordGrid, Plane, Stack};
use crate::infer::PatchModel;
use crate::{Error, Result};

/// Generator with `f64` weights, ready to evaluate.
#[derive(Debug, Clone)]
pub struct Generator {
    arch: ArchConfig,
    layout: GenLayout,
    w: Vec<f64>,
}

/// Activations kept for the backward pass.
pub(crate) struct GenCache {
    /// Input of every encoder layer; entry 0 is the patch itself.
    enc_inputs: Vec<Vec<f64>>,
    /// Modulation codes, `[m][pixel]`.
    z: Vec<f64>,
    /// Hidden activations, `[pixel][layer][h]`.
    hidden: Vec<f64>,
}

impl Generator {
    /// `w` must hold `arch.param_count()` values in layout order.
    pub fn new(arch: ArchConfig, w: Vec<f64>) -> Self {
        let layout = arch.gen_layout();
        assert_eq!(w.len(), arch.param_count(), "generator weight count");
        Generator { arch, layout, w }
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub(crate) fn layout(&self) -> &GenLayout {
        &self.layout
    }

    fn check(&self, input: &Stack, coords: &CoordGrid) -> Result<()> {
        if input.channels() != self.arch.channels {
            return Err(Error::Mismatch(alloc::format!(
                "model expects {} channel(s), patch has {}",
                self.arch.channels,
                input.channels()
            )));
        }
        if coords.rows.len() != input.rows() || coords.cols.len() != input.cols() {
            return Err(Error::Mismatch(alloc::format!(
                "coordinate grid {}x{} does not match patch {}x{}",
                coords.rows.len(),
                coords.cols.len(),
                input.rows(),
                input.cols()
            )));
        }
        Ok(())
    }

    fn enc_conv(&self, k: usize) -> Conv3 {
        let cin = if k == 0 { self.arch.channels } else { self.arch.mod_channels };
        Conv3 { cin, cout: self.arch.mod_channels, stride: 1 }
    }

    fn encode(&self, input: &Stack) -> (Vec<Vec<f64>>, Vec<f64>) {
        let (h, w) = (input.rows(), input.cols());
        let mut inputs = vec![input.data().to_vec()];
        let m = self.arch.mod_channels;
        let mut z = Vec::new();
        for k in 0..self.arch.enc_layers {
            let (wo, bo) = self.layout.enc[k];
            let conv = self.enc_conv(k);
            let wt = &self.w[wo..wo + m * conv.cin * 9];
            let out = conv.forward(inputs.last().unwrap(), h, w, wt, &self.w[bo..bo + m]);
            if k + 1 == self.arch.enc_layers {
                z = out;
            } else {
                inputs.push(out.into_iter().map(libm::tanh).collect());
            }
        }
        (inputs, z)
    }

    /// Decoder output for one pixel (without the residual term). Writes the
    /// hidden activations into `hidden` when given.
    fn decode_pixel(&self, zp: &[f64], coord: [f64; 2], mut hidden: Option<&mut [f64]>) -> f64 {
        let (h, m, d) = (self.arch.hidden, self.arch.mod_channels, self.arch.dec_layers);
        let mut prev: Vec<f64> = coord.to_vec();
        let mut cur = vec![0.0; h];
        for k in 0..d - 1 {
            let (wo, bo) = self.layout.dec[k];
            let mo = self.layout.modulation[k];
            let fan_in = prev.len();
            for (j, c) in cur.iter_mut().enumerate() {
                let row = &self.w[wo + j * fan_in..wo + (j + 1) * fan_in];
                let mrow = &self.w[mo + j * m..mo + (j + 1) * m];
                let a = self.w[bo + j]
                    + row.iter().zip(&prev).map(|(a, b)| a * b).sum::<f64>()
                    + mrow.iter().zip(zp).map(|(a, b)| a * b).sum::<f64>();
                *c = libm::tanh(a);
            }
            if let Some(buf) = hidden.as_deref_mut() {
                buf[k * h..(k + 1) * h].copy_from_slice(&cur);
            }
            prev.clear();
            prev.extend_from_slice(&cur);
        }
        let (wo, bo) = self.layout.dec[d - 1];
        self.w[bo] + self.w[wo..wo + h].iter().zip(&prev).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn forward(&self, input: &Stack, coords: &CoordGrid) -> Result<Plane> {
        self.forward_region(input, coords, 0..input.rows(), 0..input.cols())
    }

    pub fn forward_region(
        &self,
        input: &Stack,
        coords: &CoordGrid,
        rows: Range<usize>,
        cols: Range<usize>,
    ) -> Result<Plane> {
        self.check(input, coords)?;
        if rows.end > input.rows() || cols.end > input.cols() || rows.is_empty() || cols.is_empty() {
            return Err(Error::OutOfRange(alloc::format!(
                "region {rows:?} x {cols:?} outside {}x{} patch",
                input.rows(),
                input.cols()
            )));
        }
        let (_, z) = self.encode(input);
        let npix = input.rows() * input.cols();
        let m = self.arch.mod_channels;
        let mut zp = vec![0.0; m];
        let x0 = input.channel(0);
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for r in rows.clone() {
            for c in cols.clone() {
                let p = r * input.cols() + c;
                for (j, v) in zp.iter_mut().enumerate() {
                    *v = z[j * npix + p];
                }
                let mut y = self.decode_pixel(&zp, [coords.rows[r], coords.cols[c]], None);
                if self.arch.residual {
                    y += x0[p];
                }
                out.push(y);
            }
        }
        Plane::new(rows.len(), cols.len(), out)
    }

    pub(crate) fn forward_train(&self, input: &Stack, coords: &CoordGrid) -> Result<(Plane, GenCache)> {
        self.check(input, coords)?;
        let (enc_inputs, z) = self.encode(input);
        let npix = input.rows() * input.cols();
        let (m, h, d) = (self.arch.mod_channels, self.arch.hidden, self.arch.dec_layers);
        let stride = (d - 1) * h;
        let mut hidden = vec![0.0; npix * stride];
        let mut zp = vec![0.0; m];
        let x0 = input.channel(0);
        let mut out = Vec::with_capacity(npix);
        for p in 0..npix {
            for (j, v) in zp.iter_mut().enumerate() {
                *v = z[j * npix + p];
            }
            let (r, c) = (p / input.cols(), p % input.cols());
            let mut y = self.decode_pixel(
                &zp,
                [coords.rows[r], coords.cols[c]],
                Some(&mut hidden[p * stride..(p + 1) * stride]),
            );
            if self.arch.residual {
                y += x0[p];
            }
            out.push(y);
        }
        Ok((Plane::new(input.rows(), input.cols(), out)?, GenCache { enc_inputs, z, hidden }))
    }

    /// Adds the gradient of `sum(dout * output)` to `grad`.
    pub(crate) fn backward(
        &self,
        input: &Stack,
        coords: &CoordGrid,
        cache: &GenCache,
        dout: &[f64],
        grad: &mut [f64],
    ) {
        let (rows, cols) = (input.rows(), input.cols());
        let npix = rows * cols;
        let (m, h, d) = (self.arch.mod_channels, self.arch.hidden, self.arch.dec_layers);
        let stride = (d - 1) * h;
        let mut dz = vec![0.0; m * npix];
        let mut dh = vec![0.0; h];
        let mut da = vec![0.0; h];
        let mut dprev = vec![0.0; h];
        for p in 0..npix {
            let g = dout[p];
            if g == 0.0 {
                continue;
            }
            let hid = &cache.hidden[p * stride..(p + 1) * stride];
            let coord = [coords.rows[p / cols], coords.cols[p % cols]];
            let (wo, bo) = self.layout.dec[d - 1];
            grad[bo] += g;
            let last = &hid[(d - 2) * h..(d - 1) * h];
            for j in 0..h {
                grad[wo + j] += g * last[j];
                dh[j] = g * self.w[wo + j];
            }
            for k in (0..d - 1).rev() {
                let act = &hid[k * h..(k + 1) * h];
                for j in 0..h {
                    da[j] = dh[j] * (1.0 - act[j] * act[j]);
                }
                let (wo, bo) = self.layout.dec[k];
                let mo = self.layout.modulation[k];
                for j in 0..h {
                    grad[bo + j] += da[j];
                    for q in 0..m {
                        let zq = cache.z[q * npix + p];
                        grad[mo + j * m + q] += da[j] * zq;
                        dz[q * npix + p] += da[j] * self.w[mo + j * m + q];
                    }
                }
                if k == 0 {
                    for j in 0..h {
                        grad[wo + j * 2] += da[j] * coord[0];
                        grad[wo + j * 2 + 1] += da[j] * coord[1];
                    }
                } else {
                    let prev = &hid[(k - 1) * h..k * h];
                    dprev.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..h {
                        let row = wo + j * h;
                        for i in 0..h {
                            grad[row + i] += da[j] * prev[i];
                            dprev[i] += da[j] * self.w[row + i];
                        }
                    }
                    dh.copy_from_slice(&dprev);
                }
            }
        }

        let mut g = dz;
        for k in (0..self.arch.enc_layers).rev() {
            let conv = self.enc_conv(k);
            let (wo, bo) = self.layout.enc[k];
            let nw = m * conv.cin * 9;
            let (gw, gb) = {
                let (a, b) = grad.split_at_mut(bo);
                (&mut a[wo..wo + nw], &mut b[..m])
            };
            let x = &cache.enc_inputs[k];
            let dx = conv.backward(x, rows, cols, &self.w[wo..wo + nw], &g, gw, gb, k > 0);
            if let Some(mut dx) = dx {
                // x = tanh(previous conv output)
                for (v, a) in dx.iter_mut().zip(x) {
                    *v *= 1.0 - a * a;
                }
                g = dx;
            }
        }
    }
}

impl PatchModel for Generator {
    fn channels(&self) -> usize {
        self.arch.channels
    }

    fn predict(&self, input: &Stack, coords: &CoordGrid) -> Result<Plane> {
        self.forward(input, coords)
    }
}
