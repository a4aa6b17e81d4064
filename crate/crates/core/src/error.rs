use std::io;

use thiserror::Error;

/// Errors surfaced by mesh generation, assembly, solves and the experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scheme state error: {0}")]
    State(String),

    #[error("linear solve failed: {reason} (relative residual {residual:.3e})")]
    Solver { reason: String, residual: f64 },

    #[error("time {t} not covered by stored trajectory")]
    OutOfRange { t: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("numerical blow-up: {0}")]
    BlowUp(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
