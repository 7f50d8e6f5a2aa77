use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and its front end.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller broke an operation's precondition (ordering, minimum length, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A configuration file could not be parsed.
    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    /// A configuration value breaks a documented invariant.
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } => 2,
            Error::Validation { .. } | Error::Domain(_) | Error::Usage(_) => 3,
            Error::Io { .. } | Error::Csv { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
