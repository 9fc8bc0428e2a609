use thiserror::Error;

/// Errors produced by dataset construction, model evaluation, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Array dimensions did not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller broke an API contract (e.g. GN forward without labels).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The training loss became non-finite.
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// A checkpoint could not be read back into a model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
