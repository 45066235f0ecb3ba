use thiserror::Error;

pub type Result<T> = std::result::Result<T, HseError>;

#[derive(Debug, Error)]
pub enum HseError {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("out of order: expected label for point {expected:?}, got point {got}")]
    OutOfOrder { expected: Option<usize>, got: usize },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("pool exhausted: no unlabeled points remain")]
    PoolExhausted,
    #[error("session complete")]
    SessionComplete,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
