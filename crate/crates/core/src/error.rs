use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the metric pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {context} at {location}: {message}")]
    Format {
        context: String,
        location: String,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("id {id} out of range for vocabulary of size {vocab_size}")]
    Range { id: usize, vocab_size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate representation: {0}")]
    DegenerateRepresentation(String),

    #[error("non-finite value in {tensor}: {detail}")]
    Numeric { tensor: String, detail: String },

    #[error("insufficient corpus: {0}")]
    InsufficientCorpus(String),

    #[error("schema errors: {}", .0.join("; "))]
    Schema(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        context: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            context: context.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
