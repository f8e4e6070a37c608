use nar_autodiff::TensorError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid input to {op}: {msg}")]
    Input { op: &'static str, msg: String },
    #[error("{task}: no connected graph after {tries} draws")]
    Resample { task: &'static str, tries: usize },
    #[error("augmentation changed the output of a {0} instance")]
    Augmentation(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("evaluation needs at least one instance")]
    EmptyEvaluation,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Input { op, msg: msg.into() }
    }
}
