use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter {theta:?} outside the support {support}")]
    OutOfSupport { theta: Vec<f64>, support: String },

    #[error("backward pass already ran on this graph")]
    BackwardTwice,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`; optimizer step rejected")]
    NonFiniteGradient(String),

    #[error("non-finite value in flow block {block}")]
    FlowNonFinite { block: usize },

    #[error("non-finite loss in round {round}")]
    NonFiniteLoss { round: usize },

    #[error("round {round}: {invalid} of {attempts} simulations invalid (limit {limit:.0}%)")]
    TooManyInvalid {
        round: usize,
        invalid: usize,
        attempts: usize,
        limit: f64,
    },

    #[error("posterior sampling accepted only {accepted} of {drawn} draws inside the prior box")]
    ProposalExhausted { accepted: usize, drawn: usize },

    #[error("covariance is not positive definite at row {0}")]
    NotPositiveDefinite(usize),

    #[error("no analytic reference posterior exists for model `{0}`")]
    NoReference(String),

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient(_)
                | Error::FlowNonFinite { .. }
                | Error::NonFiniteLoss { .. }
                | Error::TooManyInvalid { .. }
                | Error::ProposalExhausted { .. }
                | Error::NotPositiveDefinite(_)
        )
    }
}
