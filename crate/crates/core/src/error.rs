use thiserror::Error;

/// Errors raised by fitting, cross-validation and bias estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("no convergence after {iterations} iterations: {message}")]
    Convergence {
        iterations: usize,
        message: String,
        /// Objective or parameter-change history, one entry per iteration.
        trace: Vec<f64>,
    },

    #[error("model not identifiable: {0}")]
    Identifiability(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<Error> },

    #[error("bootstrap replicate (outer {outer}, inner {inner}), fold {fold}: {source}")]
    Replicate {
        outer: usize,
        inner: usize,
        fold: usize,
        source: Box<Error>,
    },

    #[error("{failed} of {total} repetitions failed; first failure: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Error {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input or configuration rather than numerical failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::Json(_) | Error::Unsupported(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
