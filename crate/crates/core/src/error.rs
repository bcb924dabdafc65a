use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DrfError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("window length {given} is below the minimum {min} for the {encoder} encoder")]
    WindowTooShort {
        encoder: &'static str,
        given: usize,
        min: usize,
    },

    #[error("inducing points ({inducing}) must be fewer than the batch size ({batch})")]
    InducingNotBelowBatch { inducing: usize, batch: usize },

    #[error("cholesky of K_ZZ failed even with jitter {jitter:e}")]
    Cholesky { jitter: f64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("model is not normalised: {0}")]
    Unnormalized(String),

    #[error(transparent)]
    Autodiff(#[from] drf_autodiff::AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DrfError>;

pub(crate) fn invalid(msg: impl Into<String>) -> DrfError {
    DrfError::Invalid(msg.into())
}
