//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// I/O failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file failed to parse; `location` is a line number for text formats
    /// or a byte offset for binary formats.
    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    /// A binary file had a bad magic, version, or was truncated.
    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Mesh data violated a structural invariant.
    #[error("mesh validation failed: {0}")]
    MeshValidation(String),

    /// An argument was outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Iterative eigensolver failed to reach the residual tolerance.
    #[error("eigensolver did not converge after {iterations} iterations; worst residual {worst_residual:.3e}")]
    EigenNonConvergence {
        iterations: usize,
        worst_residual: f64,
    },

    /// A checkpoint or cache does not match the requested configuration.
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    /// Training diverged (NaN loss); carries diagnostics.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// A required input file is missing.
    #[error("missing input: {0}")]
    MissingInput(PathBuf),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    /// The CLI maps these to exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Format { .. }
                | Error::MeshValidation(_)
                | Error::InvalidArgument(_)
                | Error::ConfigMismatch(_)
                | Error::MissingInput(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
