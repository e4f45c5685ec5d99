//! Core algorithms for simulating and restoring reduced-dose contrast-enhanced
//! MRI volumes and for scoring the result.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches the file
//! system, CSV or the command line lives in the `lowdose` companion crate.
//!
//! Pipeline, in order of use:
//!
//! * [`phantom`] generates synthetic T1 / T1ce / label triplets with known truth.
//! * [`calibrate`] maps T1ce intensities into the T1 window using two histogram peaks.
//! * [`simulate`] mixes T1 and calibrated T1ce into a reduced-dose image and
//!   normalizes to `[-1, 1]`.
//! * [`model`] is the restoration network: a convolutional encoder producing
//!   per-pixel modulation codes and a coordinate decoder with shift modulation.
//! * [`infer`] restores whole volumes with Gaussian-blended sliding windows.
//! * [`metrics`] and [`stats`] score the output.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod calibrate;
mod error;
pub mod grid;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod simulate;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BoundingBox, Label, Mask, Volume};
