//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violated a documented precondition.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A configured resource budget (memory or enumeration size) was exceeded.
    #[error("budget exceeded: {0}")]
    Budget(String),

    /// Bisection search exhausted its restarts; carries the best imbalance seen.
    #[error("bisection did not reach tolerance: best imbalance {best_imbalance}")]
    BisectFailed { best_imbalance: f64 },

    /// The evaluation grid cannot represent the requested object.
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("i/o failure at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn budget(msg: impl Into<String>) -> Self {
        Error::Budget(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
