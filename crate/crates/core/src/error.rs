use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("example generation failed: {0}")]
    Generation(String),

    #[error("resampling failed: {0}")]
    Resample(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {msg}")]
    Training { step: usize, msg: String },

    #[error("non-finite loss at example {example}")]
    NonFiniteLoss { example: usize },

    #[error("incompatible parameter file: expected config {expected}, file has {found}")]
    Compatibility { expected: String, found: String },

    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("invalid matrix: {0}")]
    Matrix(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
