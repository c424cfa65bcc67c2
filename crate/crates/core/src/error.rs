use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the tandem library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cost parameters: {0}")]
    InvalidCostParams(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("invalid trial `{id}`: {reason}")]
    InvalidTrial { id: String, reason: String },

    #[error("duplicate trial id `{0}`")]
    DuplicateTrialId(String),

    #[error("missing {0} class")]
    MissingClass(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("stale or mismatched forward cache: {0}")]
    StaleCache(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("scores are anti-oriented (fitted scale a = {0} <= 0)")]
    AntiOriented(f64),

    #[error("calibration did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown method `{name}`; valid methods are: {valid}")]
    UnknownMethod { name: String, valid: String },

    #[error("inconsistent runs: {0}")]
    InconsistentRuns(String),

    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
