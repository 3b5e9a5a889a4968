//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used by every fallible routine in this crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed PLY input; `location` names the offending line (ASCII) or
    /// byte offset (binary).
    #[error("ply parse error at {location}: {message}")]
    PlyParse { location: String, message: String },

    /// Malformed binary container or JSON model file.
    #[error("format error: {0}")]
    Format(String),

    /// Shape disagreement between inputs.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    /// Parameter outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input data that cannot support the requested operation
    /// (empty cloud, zero-norm direction, rank-deficient covariance, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A violated internal invariant; always a bug, never a data problem.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// Shorthand for [`Error::DimensionMismatch`].
    pub fn dims(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
