//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A value fell outside the domain of a function or distribution.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or incompatible binary container.
    #[error("format error: {0}")]
    Format(String),

    /// Input data failed to parse or validate.
    #[error("data error: {0}")]
    Data(String),

    /// A forward or training step produced NaN/Inf.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

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

    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::State(_) => 1,
            Error::Numeric(_) => 3,
            Error::Dimension(_)
            | Error::Domain(_)
            | Error::DegenerateGraph(_)
            | Error::Format(_)
            | Error::Data(_)
            | Error::Io { .. } => 2,
        }
    }
}
