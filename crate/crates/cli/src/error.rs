//! Error classification for process exit codes.
//!
//! Every failure is sorted into one of three buckets so scripts can react
//! without parsing messages: configuration problems (exit 2), broken or
//! missing data (exit 3), and internal invariant violations (exit 4).

use std::fmt;

/// A pipeline failure, classified by who has to fix it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// The configuration or command line is wrong; rerun with different
    /// settings.
    Config(String),
    /// Input files are missing, unreadable, or inconsistent with each other.
    Data(String),
    /// A bug in the pipeline itself.
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<lidarsphere::Error> for CliError {
    fn from(e: lidarsphere::Error) -> Self {
        match e {
            lidarsphere::Error::InvalidArgument(_) => CliError::Config(e.to_string()),
            lidarsphere::Error::Internal(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
