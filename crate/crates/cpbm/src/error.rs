//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by corpus construction, simulation, harvesting, training,
/// and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (bad zeta, empty ranker set, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Inconsistent data passed between pipeline stages.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid argument to an evaluation or model call.
    #[error("input error: {0}")]
    Input(String),

    /// Non-finite values encountered during optimization or inference.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Model file does not match the requested family or dimensions.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
