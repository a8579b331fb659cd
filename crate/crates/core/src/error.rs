use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A caller broke an API contract (non-scalar loss, missing gradient, ...).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("{path}: malformed image header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path}: unsupported maxval {maxval} (only 255 is accepted)")]
    UnsupportedMaxval { path: PathBuf, maxval: u32 },

    #[error("{path}: truncated pixel payload ({got} of {expected} bytes)")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    #[error("labels.csv references missing file {0:?}")]
    MissingImage(String),

    #[error("labels.csv: label {label} for {file:?} outside [0, {num_classes})")]
    LabelOutOfRange {
        file: String,
        label: i64,
        num_classes: usize,
    },

    #[error("labels.csv: {0}")]
    Labels(String),

    #[error("checkpoint: bad magic {0:?}")]
    BadMagic(Vec<u8>),

    #[error("checkpoint: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint: truncated file ({0})")]
    Truncated(&'static str),

    #[error("checkpoint: duplicate tensor name {0:?}")]
    DuplicateName(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
