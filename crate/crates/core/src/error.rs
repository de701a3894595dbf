use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate batch: contrastive losses need at least 2 pairs, got {0}")]
    DegenerateBatch(usize),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input at byte offset {offset}: {source}")]
    Truncated {
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for failures that come from reading or decoding files rather
    /// than from bad parameters.
    pub fn is_io_or_format(&self) -> bool {
        matches!(self, Error::Format(_) | Error::Truncated { .. } | Error::Io(_) | Error::Json(_))
    }
}
