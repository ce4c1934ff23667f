use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} outside the available spectrum ({context})")]
    OutOfBand { index: i64, context: String },

    #[error("look-up table does not match the data it is applied to: {0}")]
    StaleLut(String),

    #[error("look-up table cache entry {path} was built for different parameters: {reason}")]
    FingerprintCollision { path: PathBuf, reason: String },

    #[error("distortion function pole reached for element {element} (t = {time:e} s)")]
    Singularity { element: usize, time: f64 },

    #[error("measurement failed: {0}")]
    MeasurementFailed(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("malformed {what} file {path}: {msg}")]
    Format {
        what: &'static str,
        path: PathBuf,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the `focus` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidParameter(_) | Error::InvalidInput(_) => 1,
            Error::NonFinite(_)
            | Error::Singularity { .. }
            | Error::MeasurementFailed(_)
            | Error::OutOfBand { .. }
            | Error::StaleLut(_) => 2,
            Error::Io { .. } | Error::Format { .. } | Error::FingerprintCollision { .. } => 3,
        }
    }
}
