use thiserror::Error;

use crate::model::Params;

pub type Result<T> = std::result::Result<T, Error>;

/// Every variant carries the `module::operation` that raised it so the
/// CLI can report where a failure happened.
#[derive(Debug, Error)]
pub enum Error {
    #[error("[{op}] numerical domain error: {detail}")]
    NumericalDomain { op: &'static str, detail: String },

    #[error("[{op}] linear algebra failure: {detail}")]
    LinearAlgebra { op: &'static str, detail: String },

    #[error("[{op}] invalid input: {detail}")]
    InvalidInput { op: &'static str, detail: String },

    #[error("[{op}] configuration error: {detail}")]
    Config { op: &'static str, detail: String },

    #[error("[io::load_dataset] {file}:{line}: {detail}")]
    Parse { file: String, line: u64, detail: String },

    #[error("[{op}] {path}: {source}")]
    Io {
        op: &'static str,
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("[{op}] {stage} failed: {source}")]
    Stage {
        op: &'static str,
        stage: &'static str,
        /// Last parameter values reached before the failure.
        partial: Option<Box<Params>>,
        #[source]
        source: Box<Error>,
    },

    #[error("[simulate::replicate_study] {failed} of {total} replicates failed (limit 10%)")]
    Study { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::NumericalDomain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn linalg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::LinearAlgebra {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn input(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidInput {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Config {
            op,
            detail: detail.into(),
        }
    }
}
