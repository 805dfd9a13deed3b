use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use drilldown_core::chartspec::SpecError;
use drilldown_core::intent::IntentError;
use drilldown_core::llm::LlmError;
use drilldown_core::tabular::TabularError;
use drilldown_core::tree::TreeError;

/// Wire error: a stable code from the catalog, a message and the status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    pub code: &'static str,
    pub message: String,
    pub http_status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            http_status: status.as_u16(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }

    pub fn session_not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "SESSION_NOT_FOUND", format!("no session `{id}`"))
    }

    pub fn busy() -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "DRILL_IN_FLIGHT",
            "another drill or insight request is running for this session",
        )
    }

    pub fn no_dataset() -> Self {
        Self::new(StatusCode::CONFLICT, "NO_DATASET", "upload a dataset first")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(serde_json::json!({ "error": self }))).into_response()
    }
}

impl From<TabularError> for ApiError {
    fn from(e: TabularError) -> Self {
        let msg = e.to_string();
        match e {
            TabularError::CellCapExceeded { .. } => Self::new(StatusCode::PAYLOAD_TOO_LARGE, "CELL_CAP_EXCEEDED", msg),
            TabularError::MalformedCsv(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "MALFORMED_CSV", msg),
            TabularError::DuplicateColumn(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "DUPLICATE_COLUMN", msg),
            TabularError::UnknownField(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "FIELD_NOT_FOUND", msg),
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_DATA", msg),
        }
    }
}

impl From<TreeError> for ApiError {
    fn from(e: TreeError) -> Self {
        let msg = e.to_string();
        match e {
            TreeError::UnknownNode(_) | TreeError::UnknownParent(_) => {
                Self::new(StatusCode::NOT_FOUND, "UNKNOWN_NODE", msg)
            }
            TreeError::NotALeaf(_) => Self::new(StatusCode::CONFLICT, "NOT_A_LEAF", msg),
            TreeError::InvalidSpec(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_SPEC", msg),
            TreeError::Corrupt(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "CORRUPT_TREE", msg),
        }
    }
}

impl From<IntentError> for ApiError {
    fn from(e: IntentError) -> Self {
        let code = match e {
            IntentError::OutOfOrderTimestamp { .. } => "OUT_OF_ORDER_TIMESTAMP",
            IntentError::InvalidEvent(_) => "INVALID_EVENT",
            IntentError::UnmappableGesture(_) => "UNMAPPABLE_GESTURE",
            IntentError::UnparseableFilterExpression(_) => "UNPARSEABLE_FILTER",
            IntentError::EmptyIntent => "EMPTY_INTENT",
        };
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, e.to_string())
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        let msg = e.to_string();
        match e {
            LlmError::AdapterUnavailable(_) => Self::new(StatusCode::BAD_GATEWAY, "ADAPTER_UNAVAILABLE", msg),
            LlmError::Timeout(_) => Self::new(StatusCode::GATEWAY_TIMEOUT, "TIMEOUT", msg),
            LlmError::UnparseablePayload(_) => Self::new(StatusCode::BAD_GATEWAY, "UNPARSEABLE_PAYLOAD", msg),
            LlmError::SchemaMismatch { .. } => Self::new(StatusCode::BAD_GATEWAY, "SCHEMA_MISMATCH", msg),
            LlmError::MissingFixture(_) => Self::new(StatusCode::BAD_GATEWAY, "MISSING_FIXTURE", msg),
            LlmError::InvalidConfig(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_CONFIG", msg),
            LlmError::InvalidPrompt(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_PROMPT", msg),
        }
    }
}

impl From<SpecError> for ApiError {
    fn from(e: SpecError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string())
    }
}
