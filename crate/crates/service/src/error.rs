use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failures reported to HTTP clients as `{code, message}`.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown or expired session")]
    UnknownSession,
    #[error("{0}")]
    Validation(String),
    /// The request does not fit the session's pending state.
    #[error("{0}")]
    State(String),
    #[error("{0}")]
    Precondition(String),
    #[error("a round advance is already running")]
    Busy,
    #[error("training failed: {0}")]
    TrainingFailed(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession => "UNKNOWN_SESSION",
            ServiceError::Validation(_) => "VALIDATION_ERROR",
            ServiceError::State(_) => "STATE_ERROR",
            ServiceError::Precondition(_) => "PRECONDITION_FAILED",
            ServiceError::Busy => "BUSY",
            ServiceError::TrainingFailed(_) => "TRAINING_FAILED",
            ServiceError::NotFound(_) => "NOT_FOUND",
            ServiceError::Internal(_) => "INTERNAL",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession => StatusCode::UNAUTHORIZED,
            ServiceError::Validation(_) => StatusCode::BAD_REQUEST,
            ServiceError::State(_) | ServiceError::Busy => StatusCode::CONFLICT,
            ServiceError::Precondition(_) => StatusCode::PRECONDITION_FAILED,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::TrainingFailed(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { code: self.code().to_string(), message: self.to_string() }
    }
}

impl From<banditqa_core::Error> for ServiceError {
    fn from(e: banditqa_core::Error) -> Self {
        if e.is_input() {
            ServiceError::Validation(e.to_string())
        } else {
            ServiceError::Internal(e.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        (self.status(), Json(self.body())).into_response()
    }
}
