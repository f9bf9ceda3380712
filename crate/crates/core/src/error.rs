use thiserror::Error;

use crate::io::DataError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("requested K = {k} exceeds the number of classes ({classes})")]
    InvalidK { k: usize, classes: usize },

    #[error("linear system is singular or not positive definite (pivot {pivot} at row {row})")]
    SingularSystem { row: usize, pivot: f64 },

    #[error("{block} dictionary step diverged: objective rose from {before:.6e} to {after:.6e} after {halvings} step halvings")]
    StepDivergence {
        block: &'static str,
        before: f64,
        after: f64,
        halvings: usize,
    },

    #[error("no sample count up to {limit} satisfies the requested error bound")]
    Infeasible { limit: u64 },

    #[error("{stage}: {count} solver run(s) did not reach the requested tolerance")]
    NonConvergence { stage: &'static str, count: usize },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) fn check_dims(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(what()))
    }
}
