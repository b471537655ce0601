use thiserror::Error;

pub type Result<T> = std::result::Result<T, BatError>;

#[derive(Debug, Error)]
pub enum BatError {
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A pooled slice had no unmasked element.
    #[error("degenerate slice: {0}")]
    DegenerateSlice(String),

    /// Every key was padded for at least one query.
    #[error("degenerate attention: {0}")]
    DegenerateAttention(String),

    #[error("numeric error in {op}: {detail}")]
    Numeric { op: String, detail: String },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("epoch composition error: {0}")]
    Composition(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("synthetic spec error: {0}")]
    Spec(String),

    #[error("registry error: {0}")]
    Registry(String),

    #[error("state error: {0}")]
    State(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training diverged at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error("sweep error: {0}")]
    Sweep(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BatError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        BatError::Dimension(msg.into())
    }
}
