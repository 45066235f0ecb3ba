use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use hse_core::HseError;
use serde::{Deserialize, Serialize};

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<HseError> for ApiError {
    fn from(e: HseError) -> Self {
        let (status, code) = match &e {
            HseError::Parse { .. } => (StatusCode::BAD_REQUEST, "parse_error"),
            HseError::Validation(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
            HseError::Config(_) => (StatusCode::BAD_REQUEST, "invalid_config"),
            HseError::Usage(_) => (StatusCode::BAD_REQUEST, "usage_error"),
            HseError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            HseError::OutOfOrder { .. } => (StatusCode::CONFLICT, "out_of_order"),
            HseError::SessionComplete => (StatusCode::GONE, "session_complete"),
            HseError::PoolExhausted => (StatusCode::GONE, "pool_exhausted"),
            HseError::Numerical(_) | HseError::Io(_) | HseError::Json(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { code: self.code.to_string(), message: self.message };
        (self.status, Json(body)).into_response()
    }
}
