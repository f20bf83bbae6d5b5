use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate transform: determinant {det} outside [1/16, 16]")]
    DegenerateTransform { det: f64 },
    #[error("insufficient overlap: valid fraction {fraction:.4}")]
    InsufficientOverlap { fraction: f64 },
    #[error("singular normal equations (damping reached {lambda:e})")]
    SingularSystem { lambda: f64 },
    #[error("degenerate chain: canvas {width}x{height} exceeds limit {limit}")]
    DegenerateChain { width: usize, height: usize, limit: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
