//! Dense 2D planes and channel stacks used by the network and the sliding
//! window code. Values are `f64`, row-major.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A single-channel 2D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::InvalidShape(alloc::format!(
                "{rows}x{cols} plane needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Plane { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Plane { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Plane { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Copy of the window starting at `(r0, c0)`.
    pub fn window(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Plane {
        Plane::from_fn(rows, cols, |r, c| self.get(r0 + r, c0 + c))
    }

    pub fn flip_horizontal(&self) -> Plane {
        Plane::from_fn(self.rows, self.cols, |r, c| self.get(r, self.cols - 1 - c))
    }

    pub fn flip_vertical(&self) -> Plane {
        Plane::from_fn(self.rows, self.cols, |r, c| self.get(self.rows - 1 - r, c))
    }

    /// Translates the content by `(dr, dc)`; uncovered pixels take `fill`.
    pub fn shifted(&self, dr: isize, dc: isize, fill: f64) -> Plane {
        Plane::from_fn(self.rows, self.cols, |r, c| {
            let sr = r as isize - dr;
            let sc = c as isize - dc;
            if sr >= 0 && sc >= 0 && (sr as usize) < self.rows && (sc as usize) < self.cols {
                self.get(sr as usize, sc as usize)
            } else {
                fill
            }
        })
    }
}

/// Channel-major stack of equally sized planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Stack {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Stack { channels, rows, cols, data: vec![0.0; channels * rows * cols] }
    }

    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidShape("stack needs at least one plane".into()))?;
        let (rows, cols) = first.shape();
        let mut data = Vec::with_capacity(planes.len() * rows * cols);
        for p in planes {
            if p.shape() != (rows, cols) {
                return Err(Error::Mismatch(alloc::format!(
                    "plane {:?} does not match {:?}",
                    p.shape(),
                    (rows, cols)
                )));
            }
            data.extend_from_slice(p.data());
        }
        Ok(Stack { channels: planes.len(), rows, cols, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane(&self, c: usize) -> Plane {
        Plane { rows: self.rows, cols: self.cols, data: self.channel(c).to_vec() }
    }
}

/// Regular coordinate grid attached to a patch: one normalized coordinate per
/// row and per column.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

impl CoordGrid {
    /// Each axis mapped linearly onto `[-1, 1]`; a length-1 axis sits at 0.
    pub fn regular(rows: usize, cols: usize) -> Self {
        CoordGrid { rows: axis(rows), cols: axis(cols) }
    }

    pub fn flipped_cols(&self) -> Self {
        let mut cols = self.cols.clone();
        cols.reverse();
        CoordGrid { rows: self.rows.clone(), cols }
    }

    pub fn flipped_rows(&self) -> Self {
        let mut rows = self.rows.clone();
        rows.reverse();
        CoordGrid { rows, cols: self.cols.clone() }
    }
}

fn axis(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}
