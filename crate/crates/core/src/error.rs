use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel has zero total flux")]
    AllZeroKernel,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("crop window of {size} px at ({row}, {col}) leaves the {height}x{width} scan")]
    WindowOutOfBounds {
        size: usize,
        row: f64,
        col: f64,
        width: usize,
        height: usize,
    },

    #[error("scan of {width}x{height} px cannot be binned by {factor} into an odd square kernel")]
    NonDivisibleSize {
        width: usize,
        height: usize,
        factor: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{0} out of range")]
    OutOfRange(String),

    #[error("object distance {object_m} m is not beyond the focal length {focal_mm} mm")]
    ObjectInsideFocal { focal_mm: f64, object_m: f64 },

    #[error("value {0} outside [0, 1]")]
    ValueOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    DivergenceDetected { epoch: usize, loss: f64 },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the environment (files, permissions) rather
    /// than by the data or parameters.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
