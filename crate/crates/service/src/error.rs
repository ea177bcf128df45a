use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

/// Upper bound on the problems listed in one validation response.
pub const MAX_PROBLEMS: usize = 256;

/// One reason a submission was rejected, located at an image pixel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct PixelProblem {
    pub image_id: usize,
    pub row: usize,
    pub col: usize,
    pub reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    /// The model is training or no snapshot exists yet.
    #[error("busy: {0}")]
    Busy(String),

    /// The request refers to a batch that is not outstanding.
    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid submission: {message}")]
    Validation {
        message: String,
        problems: Vec<PixelProblem>,
    },

    #[error(transparent)]
    Core(#[from] segal::Error),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    problems: &'a [PixelProblem],
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Busy(_) | ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Validation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ApiError::Busy(_) => "busy",
            ApiError::Conflict(_) => "conflict",
            ApiError::NotFound(_) => "not_found",
            ApiError::Validation { .. } => "validation",
            ApiError::Core(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let problems = match &self {
            ApiError::Validation { problems, .. } => problems.as_slice(),
            _ => &[],
        };
        let body = ErrorBody {
            error: self.kind(),
            message: self.to_string(),
            problems,
        };
        (self.status(), Json(body)).into_response()
    }
}
