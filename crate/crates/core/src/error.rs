use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the discovery engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("subset enumeration too large: C(n, k) = {count} exceeds the cap of {cap}")]
    Capacity { count: u128, cap: u64 },

    #[error("unsupported mode: {0}")]
    Unsupported(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("response table not normalized at probe {probe}, fact {fact}: sums to {sum}")]
    Normalization { probe: usize, fact: usize, sum: f64 },

    #[error("dangling fact id {id} (universe has {n} facts)")]
    DanglingFact { id: usize, n: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration or input files rather
    /// than failures while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::Parse { .. }
                | Error::Normalization { .. }
                | Error::DanglingFact { .. }
                | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
