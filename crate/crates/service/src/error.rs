use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("session {0} is finished")]
    Finished(String),

    #[error("{0}")]
    Validation(String),

    #[error("session capacity of {0} reached")]
    Capacity(usize),

    #[error("startup failed: {0}")]
    Startup(String),

    #[error("{0}")]
    Internal(String),

    #[error(transparent)]
    Engine(#[from] adaptest_core::Error),
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Finished(_) => "finished",
            ServiceError::Validation(_) => "validation",
            ServiceError::Capacity(_) => "capacity",
            ServiceError::Startup(_) | ServiceError::Internal(_) | ServiceError::Engine(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::Finished(_) => StatusCode::CONFLICT,
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Capacity(_) => StatusCode::TOO_MANY_REQUESTS,
            ServiceError::Startup(_) | ServiceError::Internal(_) | ServiceError::Engine(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            tracing::error!("{self}");
        }
        let body = ErrorBody {
            code: self.code(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
