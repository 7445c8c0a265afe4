use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by every layer of the library.
///
/// The variants are grouped so that a front end can map them onto exit
/// codes: configuration problems, bad input data, and numeric/runtime
/// failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}{}: {msg}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Ingest {
        path: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("embedder mismatch: model {model} vs reference {reference}")]
    EmbedderMismatch { model: String, reference: String },

    #[error("format error: {0}")]
    Format(String),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Runtime,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn ingest(path: impl Into<PathBuf>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::Io { .. }
            | Error::Ingest { .. }
            | Error::InvalidInput(_)
            | Error::EmbedderMismatch { .. }
            | Error::Format(_) => ErrorClass::Data,
            Error::Shape(_) | Error::Numeric(_) => ErrorClass::Runtime,
        }
    }
}
