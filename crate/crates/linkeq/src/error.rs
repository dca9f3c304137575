//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by simulation, training, parsing and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Vector or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A text input (Touchstone, CSV, model ROM) could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A serialized file declares a format version this build does not read.
    #[error("unsupported format version: {0}")]
    UnsupportedVersion(String),

    /// Input data is too short or otherwise unusable.
    #[error("data error: {0}")]
    Data(String),

    /// A least-squares fit could not be solved.
    #[error("fit error: {0}")]
    Fit(String),

    /// Training aborted (e.g. the loss became non-finite).
    #[error("training aborted: {0}")]
    Training(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
