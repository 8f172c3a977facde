use std::path::PathBuf;

use crate::Direction;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("value {value} outside the unit interval (rescale the data first)")]
    OutOfRange { value: f64 },

    #[error("degenerate variable: column {column} has fewer than two distinct values")]
    DegenerateColumn { column: usize },

    #[error("matrix is not positive definite{0}")]
    NotPositiveDefinite(String),

    #[error(
        "Newton minimization did not converge after {iterations} iterations \
         (gradient norm {gradient_norm:e}, tolerance {tolerance:e})"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        tolerance: f64,
        last_iterate: Vec<f64>,
    },

    #[error("forward model: {0}")]
    Degenerate(String),

    #[error("direction {direction}: {source}")]
    InDirection {
        direction: Direction,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_direction(self, direction: Direction) -> Self {
        Error::InDirection {
            direction,
            source: Box::new(self),
        }
    }

    /// Strips direction tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::InDirection { source, .. } => source.root(),
            other => other,
        }
    }
}
