use thiserror::Error;

/// Errors surfaced by the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The fractional-moment system for `gamma` could not be solved reliably.
    #[error("ill-conditioned moment system (condition number {condition:.3e}) for gamma = {gamma:?}")]
    IllConditioned { gamma: Vec<f64>, condition: f64 },

    #[error("{quantity} = {value} is outside the validity range {range}")]
    OutOfValidity {
        quantity: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Model or data file with a wrong version or checksum.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn degenerate(msg: impl Into<String>) -> Error {
    Error::Degenerate(msg.into())
}
