use std::path::PathBuf;

/// Errors raised by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model or run was configured inconsistently (e.g. parameter dimension mismatch).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its domain (empty dataset, K > n, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("parameter dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{path}: row {row}: {message}")]
    MalformedRow { path: PathBuf, row: u64, message: String },

    #[error("{path}: row {row}: label {value} out of range for {num_classes} classes")]
    LabelOutOfRange {
        path: PathBuf,
        row: u64,
        value: i64,
        num_classes: usize,
    },

    #[error("parameters became non-finite after round {round}")]
    Diverged { round: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
