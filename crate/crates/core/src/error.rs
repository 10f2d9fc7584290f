use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("negative variance {value:e} at t={t} (inconsistent decomposition constants)")]
    NegativeVariance { t: f64, value: f64 },

    #[error("level {level} would hold {nodes} nodes (~{bytes} bytes), above the cap of {cap} nodes")]
    TooLarge {
        level: usize,
        nodes: u128,
        bytes: u128,
        cap: u64,
    },

    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("timestep {t} out of range: {reason}")]
    Timestep { t: usize, reason: &'static str },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("zero stochastic error at t={t}, percentile index {s}")]
    ZeroStochasticError { t: usize, s: usize },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl std::fmt::Display, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            message: message.into(),
        }
    }
}
