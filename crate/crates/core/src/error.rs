use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss does not depend on any differentiable leaf")]
    Detached,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("corpus {0} is empty")]
    EmptyCorpus(String),

    #[error("corpus {name} has {size} examples, {needed} required")]
    CorpusTooSmall { name: String, size: usize, needed: usize },

    #[error("no corpora registered")]
    NoCorpora,

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("empty target sequence")]
    EmptyTarget,

    #[error("gradient norm {norm:e} exceeded ceiling {ceiling:e} at step {step}")]
    GradientOverflow { step: usize, norm: f64, ceiling: f64 },

    #[error("non-finite loss at step {step}")]
    Diverged { step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::GradientOverflow { .. } | Error::Diverged { .. }
        )
    }
}
