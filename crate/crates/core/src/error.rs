use std::io;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value during {stage}")]
    Numerical { stage: String },
    #[error("hyperparameter out of range: {0}")]
    HyperParam(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("training aborted at iteration {iteration}: {source}")]
    Aborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
        /// Parameters from the last iteration that completed cleanly.
        last_good: Box<crate::meta_train::TrainState>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn numerical(stage: impl Into<String>) -> Self {
        Error::Numerical { stage: stage.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
