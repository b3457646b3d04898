use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the odometry core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("raster size mismatch: expected {expected} values, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point has non-positive depth z={0}")]
    NonPositiveDepth(f64),

    #[error("semi-dense region is empty")]
    EmptyRegion,

    #[error("pixel ({0}, {1}) lies outside the field")]
    OutOfBounds(f64, f64),

    #[error("keyframe map has {found} points, need at least {required}")]
    EmptyMap { found: usize, required: usize },

    #[error("no map point projects into the current frame")]
    AllInvisible,

    #[error("normal equations are singular (condition number {0:e})")]
    Singular(f64),

    #[error("optimization diverged after {0} iterations")]
    Diverged(usize),

    #[error("not enough data: {found} samples, need {required}")]
    InsufficientData { found: usize, required: usize },

    #[error("ground truth is missing for this dataset")]
    MissingGroundTruth,

    #[error("synthetic render is empty: no scene point projects into frame {0}")]
    EmptyRender(usize),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
