//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid `(m, k, n, T, b)` combination or other bad parameter.
    #[error("configuration error: {0}")]
    Config(String),

    /// Shapes or indices that do not line up.
    #[error("structural error: {0}")]
    Structure(String),

    /// A score that is non-finite or outside `[0, 1)`.
    #[error("score domain error: {0}")]
    Domain(String),

    /// Exhaustive enumeration refused because the instance is too large.
    #[error("instance too large: {0}")]
    TooLarge(String),

    /// A checked invariant did not hold (weak duality, dual descent, ...).
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Metric requested on empty input.
    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Structure(_) => "structure",
            Error::Domain(_) => "domain",
            Error::TooLarge(_) => "too_large",
            Error::Invariant(_) => "invariant",
            Error::Empty(_) => "empty",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Serialize(_) => "serialize",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
