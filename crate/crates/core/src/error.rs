use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Everything that can go wrong inside the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Dimensions, spacing or a data length do not satisfy a container invariant.
    InvalidShape(String),
    /// A voxel holds NaN or infinity.
    NonFinite { index: usize, value: f32 },
    /// Two inputs that must be voxel-aligned are not.
    Mismatch(String),
    /// A bounding box was requested from a selection without voxels.
    EmptyMask,
    /// A box reaches outside the volume or has `min > max`.
    OutOfRange(String),
    /// Histogram of a constant volume.
    DegenerateHistogram,
    /// Normalization of a constant volume.
    ConstantVolume,
    /// Fewer than two retained histogram peaks.
    TooFewPeaks { found: usize },
    /// Second peak not above the background peak.
    PeakOrdering,
    /// Invalid configuration value.
    Config(String),
    /// Training produced a NaN or infinity; `path` names the offending tensor element.
    NonFiniteGradient { path: String },
    NonFiniteLoss { step: usize },
    /// Empty dataset, or slices too small for the patch.
    Dataset(String),
    /// Paired samples of different length or containing NaN.
    InvalidSample(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidShape(msg) => write!(f, "invalid shape: {msg}"),
            Error::NonFinite { index, value } => {
                write!(f, "non-finite value {value} at voxel index {index}")
            }
            Error::Mismatch(msg) => write!(f, "mismatch: {msg}"),
            Error::EmptyMask => write!(f, "empty mask: no voxel carries a selected label"),
            Error::OutOfRange(msg) => write!(f, "out of range: {msg}"),
            Error::DegenerateHistogram => {
                write!(f, "degenerate histogram: volume has a single distinct value")
            }
            Error::ConstantVolume => write!(f, "cannot normalize a constant volume"),
            Error::TooFewPeaks { found } => {
                write!(f, "histogram has {found} retained peak(s), need at least 2")
            }
            Error::PeakOrdering => {
                write!(f, "peak ordering: tissue peak is not above the background peak")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFiniteGradient { path } => write!(f, "non-finite gradient at {path}"),
            Error::NonFiniteLoss { step } => write!(f, "non-finite loss at step {step}"),
            Error::Dataset(msg) => write!(f, "dataset: {msg}"),
            Error::InvalidSample(msg) => write!(f, "invalid sample: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
