use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A linear system could not be solved, or a run exceeded its failure budget.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error at {path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Process exit code for each failure category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCategory {
    Config = 2,
    Numerical = 3,
    Io = 4,
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ExitCategory {
        match self {
            Error::Domain(_) | Error::Config(_) => ExitCategory::Config,
            Error::Numerical(_) => ExitCategory::Numerical,
            Error::Io { .. } | Error::Format { .. } => ExitCategory::Io,
        }
    }
}
