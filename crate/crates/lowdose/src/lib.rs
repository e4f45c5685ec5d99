//! File formats, experiment runner and command line around `lowdose-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod format;
pub mod report;
pub mod tables;

pub use error::{AppError, AppResult};
