use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel config: {0}")]
    InvalidKernel(String),

    #[error("invalid threshold config: {0}")]
    InvalidThreshold(String),

    #[error("kernel horizon of {horizon} steps exceeded by lag {lag}")]
    HorizonExceeded { horizon: usize, lag: usize },

    #[error("spike at t={spike} lies after query time t={query}")]
    SpikeAfterQuery { spike: usize, query: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward called without a forward cache for layer {0}")]
    MissingCache(usize),

    #[error("unsupported topology: {0}")]
    Topology(String),

    #[error("invalid event stream: {0}")]
    Events(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss {loss} at epoch {epoch}, sample {sample}, step {step}")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        sample: usize,
        step: usize,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
