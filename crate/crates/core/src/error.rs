use thiserror::Error;

/// Errors produced by the simulator, the policies and the learning code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("segment {segment} out of range 1..={max}")]
    SegmentOutOfRange { segment: usize, max: usize },

    #[error("action {action} out of range 0..={max}")]
    InvalidAction { action: usize, max: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("enumeration over {independents} independent channels exceeds the limit of {limit}")]
    EnumerationBound { independents: usize, limit: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at update {update}: loss = {loss}")]
    Diverged { update: usize, loss: f64 },

    #[error(
        "value iteration did not converge in {iterations} iterations (last change {change:e})"
    )]
    NoConvergence { iterations: usize, change: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
