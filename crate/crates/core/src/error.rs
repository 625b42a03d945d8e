use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A non-finite value showed up during evaluation.
    #[error("numeric overflow at {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("training diverged in epoch {epoch}: mean loss {loss:.6} exceeds 10x the initial loss {initial:.6}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("structural inconsistency between {upstream} and {downstream}: {detail}")]
    Structure {
        upstream: String,
        downstream: String,
        detail: String,
    },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    /// True for failures caused by floating-point blowups rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. } | Error::Diverged { .. })
    }
}

/// Errors raised while decoding dataset files (IDX, CIFAR-10 binary).
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic number at byte offset {offset}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        offset: usize,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated payload at byte offset {offset}: expected {expected} bytes, got {actual}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
        actual: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: file length {len} is not a multiple of the {record}-byte record size")]
    BadRecordLength {
        path: PathBuf,
        len: usize,
        record: usize,
    },

    #[error("{path}: label {label} at record {index} is out of range for {classes} classes")]
    BadLabel {
        path: PathBuf,
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Distinct failure categories for checkpoint loading.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {found:?}")]
    Magic { found: [u8; 4] },

    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("parameter {name}: shape {found:?} disagrees with the architecture, which requires {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint truncated at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}
