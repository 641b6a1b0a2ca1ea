use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use campus_bus::BusError;
use campus_coordinator::CoordError;
use thiserror::Error;

use crate::scenario::ScenarioError;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    Unauthorized(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    /// The terminal answered but refused.
    #[error("{0}")]
    BadGateway(String),
    /// The terminal did not answer.
    #[error("{0}")]
    GatewayTimeout(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::BadGateway(_) => StatusCode::BAD_GATEWAY,
            ApiError::GatewayTimeout(_) => StatusCode::GATEWAY_TIMEOUT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<CoordError> for ApiError {
    fn from(e: CoordError) -> Self {
        let msg = e.to_string();
        match e {
            CoordError::AuthDenied { .. } => ApiError::Forbidden(msg),
            CoordError::BadCredentials => ApiError::Unauthorized(msg),
            CoordError::UnknownUser(_)
            | CoordError::UnknownCard(_)
            | CoordError::UnknownTerminal(_)
            | CoordError::UnknownLayout(_)
            | CoordError::UnknownAlarm(_)
            | CoordError::UnknownRule(_)
            | CoordError::Bus(BusError::NoSuchBus(_) | BusError::NoSuchTerminal(_)) => ApiError::NotFound(msg),
            CoordError::DuplicateUser(_)
            | CoordError::LastAdmin
            | CoordError::DuplicateActiveCard { .. }
            | CoordError::LayoutExists(_)
            | CoordError::NoTerminalPassword(_) => ApiError::Conflict(msg),
            CoordError::InvalidArgument(_)
            | CoordError::BadRange { .. }
            | CoordError::MalformedLog { .. }
            | CoordError::UnverifiedCard(_)
            | CoordError::Tag(_) => ApiError::BadRequest(msg),
            CoordError::Rejected(..) | CoordError::BadReply(_) => ApiError::BadGateway(msg),
            CoordError::Bus(_) => ApiError::GatewayTimeout(msg),
            CoordError::BadPassphrase | CoordError::CorruptContainer(_) | CoordError::Io(_) => ApiError::Internal(msg),
        }
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Coordinator(e) => e.into(),
            ScenarioError::UndefinedReference(m) => ApiError::NotFound(m),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        let body = Json(serde_json::json!({ "error": self.to_string() }));
        if status == StatusCode::UNAUTHORIZED {
            (status, [(header::WWW_AUTHENTICATE, "Bearer")], body).into_response()
        } else {
            (status, body).into_response()
        }
    }
}
