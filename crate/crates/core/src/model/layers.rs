//! 3x3 convolution with zero padding 1, channel-major `[c][row][col]` buffers.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv3 {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

impl Conv3 {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize, wt: &[f64], b: &[f64]) -> Vec<f64> {
        let (ho, wo) = self.out_hw(h, w);
        let s = self.stride;
        let mut out = vec![0.0; self.cout * ho * wo];
        for o in 0..self.cout {
            let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
            plane.iter_mut().for_each(|v| *v = b[o]);
            for i in 0..self.cin {
                let xin = &x[i * h * w..(i + 1) * h * w];
                let k = &wt[(o * self.cin + i) * 9..(o * self.cin + i + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = k[ky * 3 + kx];
                        for y in 0..ho {
                            let iy = (y * s + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut plane[y * wo..(y + 1) * wo];
                            for (xo, ov) in orow.iter_mut().enumerate() {
                                let ix = (xo * s + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    *ov += kv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight and bias gradients into `dwt`/`db` and returns the
    /// input gradient when `want_dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[f64],
        h: usize,
        w: usize,
        wt: &[f64],
        dout: &[f64],
        dwt: &mut [f64],
        db: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let (ho, wo) = self.out_hw(h, w);
        let s = self.stride;
        let mut dx = if want_dx { vec![0.0; self.cin * h * w] } else { Vec::new() };
        for o in 0..self.cout {
            let g = &dout[o * ho * wo..(o + 1) * ho * wo];
            db[o] += g.iter().sum::<f64>();
            for i in 0..self.cin {
                let xin = &x[i * h * w..(i + 1) * h * w];
                let base = (o * self.cin + i) * 9;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = wt[base + ky * 3 + kx];
                        let mut acc = 0.0;
                        for y in 0..ho {
                            let iy = (y * s + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for xo in 0..wo {
                                let ix = (xo * s + kx) as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let gv = g[y * wo + xo];
                                acc += gv * xin[iy * w + ix as usize];
                                if want_dx {
                                    dx[(i * h + iy) * w + ix as usize] += gv * kv;
                                }
                            }
                        }
                        dwt[base + ky * 3 + kx] += acc;
                    }
                }
            }
        }
        want_dx.then_some(dx)
    }
}
