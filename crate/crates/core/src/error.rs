use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("backward called on a consumed tape")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate record for ({timestamp}, {symbol}) at line {line}")]
    DuplicateRecord {
        line: usize,
        timestamp: String,
        symbol: String,
    },

    #[error("empty panel after filtering")]
    EmptyPanel,

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("infeasible segmentation: {breakpoints} breakpoints on length {len} (min segment {min_len})")]
    InfeasibleSegmentation {
        breakpoints: usize,
        len: usize,
        min_len: usize,
    },

    #[error("insufficient history: need {needed} values, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("nonpositive reference price {value} at index {index}")]
    NonPositivePrice { index: usize, value: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss {loss} (task {task}, lr {lr}, batch {batch}, epoch {epoch})")]
    Diverged {
        task: String,
        loss: f64,
        lr: f64,
        batch: usize,
        epoch: usize,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: impl Into<String>) -> Self {
        Error::Shape {
            op,
            shapes: shapes.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
