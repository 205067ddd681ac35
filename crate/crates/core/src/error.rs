use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("depth {depth} m at pixel ({row}, {col}) is not representable as a 16-bit depth PNG")]
    DepthRange { row: usize, col: usize, depth: f64 },

    #[error("unsupported image format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png error on {path}: {reason}")]
    Png { path: PathBuf, reason: String },

    #[error("cannot fit model: {0}")]
    Fit(String),

    #[error("ensemble has {0} members, at least 2 are required for a variance")]
    InsufficientEnsemble(usize),

    #[error("no candidate pixels left to sample")]
    NoCandidates,

    #[error("scene has no valid ground-truth pixels")]
    EmptyScene,

    #[error("forest container: {0}")]
    ContainerFormat(String),

    #[error("forest container is truncated or corrupt: {0}")]
    Corrupt(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("negative utility {value} at index {index}")]
    NegativeUtility { index: usize, value: f64 },

    #[error("manifest {path} line {line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
