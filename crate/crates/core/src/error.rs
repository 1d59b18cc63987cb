use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    /// Transport failure while talking to a mirror; callers may retry.
    #[error("network error: {0}")]
    Network(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("I/O error at {path}: {source}")]
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

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Network(_))
    }

    /// Process exit code for the CLI. 2 is reserved for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 3,
            Error::Data(_) | Error::Integrity(_) | Error::Network(_) | Error::Io { .. } => 4,
            Error::Numeric(_) | Error::Dimension(_) | Error::Invariant(_) => 5,
            Error::Checkpoint(_) => 6,
        }
    }
}
