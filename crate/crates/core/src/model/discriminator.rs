//! Patch discriminator for the least-squares adversarial term: two stride-2
//! 3x3 convolutions with tanh, then a stride-1 3x3 convolution to a single
//! score map.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::layers::Conv3;
use super::{init_values, LayoutBuilder, TensorSpec};
use crate::grid::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscArch {
    pub widths: [usize; 2],
}

impl Default for DiscArch {
    fn default() -> Self {
        DiscArch { widths: [8, 16] }
    }
}

impl DiscArch {
    fn convs(&self) -> [Conv3; 3] {
        [
            Conv3 { cin: 1, cout: self.widths[0], stride: 2 },
            Conv3 { cin: self.widths[0], cout: self.widths[1], stride: 2 },
            Conv3 { cin: self.widths[1], cout: 1, stride: 1 },
        ]
    }

    pub fn layout(&self) -> Vec<TensorSpec> {
        let mut b = LayoutBuilder::new();
        for (k, c) in self.convs().iter().enumerate() {
            b.push(format!("disc.{k}.weight"), alloc::vec![c.cout, c.cin, 3, 3], true, c.cin * 9);
            b.push(format!("disc.{k}.bias"), alloc::vec![c.cout], false, c.cin * 9);
        }
        b.finish()
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(TensorSpec::len).sum()
    }

    pub(crate) fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f32> {
        init_values(&self.layout(), rng)
    }
}

pub struct Discriminator<'a> {
    arch: DiscArch,
    w: &'a [f64],
}

pub(crate) struct DiscCache {
    /// Input of each convolution with its height and width.
    inputs: Vec<(Vec<f64>, usize, usize)>,
}

impl<'a> Discriminator<'a> {
    pub fn new(arch: DiscArch, w: &'a [f64]) -> Self {
        assert_eq!(w.len(), arch.param_count(), "discriminator weight count");
        Discriminator { arch, w }
    }

    pub fn weight_count(&self) -> usize {
        self.w.len()
    }

    fn offsets(&self) -> [(usize, usize, usize); 3] {
        let mut off = 0;
        let mut out = [(0, 0, 0); 3];
        for (k, c) in self.arch.convs().iter().enumerate() {
            let nw = c.cout * c.cin * 9;
            out[k] = (off, off + nw, c.cout);
            off += nw + c.cout;
        }
        out
    }

    /// Score map of one image.
    pub(crate) fn forward_cached(&self, x: &Plane) -> (Vec<f64>, DiscCache) {
        let convs = self.arch.convs();
        let offs = self.offsets();
        let (mut h, mut w) = x.shape();
        let mut cur = x.data().to_vec();
        let mut inputs = Vec::new();
        for (k, c) in convs.iter().enumerate() {
            let (wo, bo, n) = offs[k];
            let out = c.forward(&cur, h, w, &self.w[wo..bo], &self.w[bo..bo + n]);
            let (ho, wout) = c.out_hw(h, w);
            inputs.push((cur, h, w));
            cur = if k + 1 < convs.len() { out.into_iter().map(libm::tanh).collect() } else { out };
            h = ho;
            w = wout;
        }
        (cur, DiscCache { inputs })
    }

    pub fn forward(&self, x: &Plane) -> Vec<f64> {
        self.forward_cached(x).0
    }

    /// Adds parameter gradients of `sum(dout * score)` to `grad` and returns
    /// the gradient with respect to the input image.
    pub(crate) fn backward(&self, cache: &DiscCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let convs = self.arch.convs();
        let offs = self.offsets();
        let mut g = dout.to_vec();
        for k in (0..convs.len()).rev() {
            let (wo, bo, n) = offs[k];
            let (x, h, w) = &cache.inputs[k];
            let (gw, gb) = {
                let (a, b) = grad.split_at_mut(bo);
                (&mut a[wo..], &mut b[..n])
            };
            let mut dx = convs[k].backward(x, *h, *w, &self.w[wo..bo], &g, gw, gb, true).unwrap();
            if k > 0 {
                for (v, a) in dx.iter_mut().zip(x) {
                    *v *= 1.0 - a * a;
                }
            }
            g = dx;
        }
        g
    }
}
