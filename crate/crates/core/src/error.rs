use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("all aggregation weights are zero")]
    ZeroWeights,

    #[error("server gradient norm {norm:e} is below the degeneracy threshold")]
    DegenerateGradient { norm: f64 },

    #[error("non-finite model parameters after round {round}")]
    NonFinite { round: usize },

    #[error("failed to parse dataset {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
