use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("frame count {n} is not aligned: expected n ≡ 1 (mod {stride})")]
    Alignment { n: usize, stride: usize },

    #[error("sequence of {got} pixel frames is shorter than one chunk ({need})")]
    TooShort { got: usize, need: usize },

    #[error("invalid frame arithmetic: {0}")]
    Arithmetic(String),

    #[error("conditioning assembly failed: {0}")]
    Assembly(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("reference strategy infeasible: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
