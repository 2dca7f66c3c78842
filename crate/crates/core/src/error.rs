use alloc::string::String;

use thiserror::Error;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("{what}: {count} speakers exceeds the exhaustive-search limit of {max}; approximate matching is not supported")]
    TooManySpeakers {
        what: &'static str,
        count: usize,
        max: usize,
    },

    #[error("malformed segment: {0}")]
    MalformedSegment(String),

    #[error("training failed at epoch {epoch}, step {step}: {detail}")]
    Training {
        epoch: usize,
        step: u64,
        detail: String,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}
