use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: model expects {expected} parameters, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter vector: {0}")]
    InvalidParams(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("operation not supported for this model: {0}")]
    UnsupportedModel(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("score covariance K is singular even after ridge escalation (condition number {condition:e})")]
    SingularK { condition: f64 },

    #[error("clean rejection rate is zero; d-ratio undefined")]
    DegenerateRatio,

    #[error("experiment aborted: {failed} of {total} replications failed")]
    ExperimentAborted { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
