use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NotScalar((usize, usize)),

    #[error("unknown parameter slot `{0}`")]
    UnknownSlot(String),

    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("invalid token {value} at position {position} (valid range 0..={max})")]
    InvalidToken {
        position: usize,
        value: i64,
        max: usize,
    },

    #[error("token sequence has length {got}, expected {expected}")]
    WrongLength { expected: usize, got: usize },

    #[error(
        "no architecture within {tolerance} of size {target} after {draws} draws; \
         widen the tolerance or move the target"
    )]
    RejectionBudget {
        target: u64,
        tolerance: f64,
        draws: usize,
    },

    #[error("teacher network produced degenerate labels after {0} attempts")]
    DegenerateTeacher(usize),

    #[error("invalid task parameters: {0}")]
    InvalidTask(String),

    #[error("non-finite loss at step {step} for architecture {tokens:?}")]
    NonFiniteLoss { step: u64, tokens: Vec<usize> },

    #[error("candidate pool is empty")]
    EmptyPool,

    #[error("duplicate architecture {0:?} in pool")]
    DuplicateArch(Vec<usize>),

    #[error("surrogate needs at least {needed} scored architectures, got {got}")]
    TooFewScores { needed: usize, got: usize },

    #[error("{0}")]
    Metric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("search aborted at iteration {iteration} (checkpoint at {checkpoint}): {source}")]
    SearchAborted {
        iteration: usize,
        checkpoint: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
