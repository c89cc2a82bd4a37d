use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// Error body of every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApiError {
    BadRequest { msg: String, path: Option<String> },
    /// The request kind needs a model that was not configured.
    NotEnabled(String),
    NotReady,
    Internal(String),
}

impl ApiError {
    pub fn bad_request(msg: impl Into<String>, path: Option<&str>) -> Self {
        ApiError::BadRequest {
            msg: msg.into(),
            path: path.map(str::to_string),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest { .. } | ApiError::NotEnabled(_) => StatusCode::BAD_REQUEST,
            ApiError::NotReady => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (error, path) = match self {
            ApiError::BadRequest { msg, path } => (msg.clone(), path.clone()),
            ApiError::NotEnabled(kind) => (format!("kind {kind} is not enabled on this server"), Some("kind".into())),
            ApiError::NotReady => ("models are still loading".into(), None),
            ApiError::Internal(msg) => (msg.clone(), None),
        };
        ErrorBody { error, path }
    }
}

impl From<penwise::Error> for ApiError {
    fn from(e: penwise::Error) -> Self {
        if e.is_validation() {
            ApiError::bad_request(e.to_string(), None)
        } else {
            ApiError::Internal(e.to_string())
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.body().error)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
