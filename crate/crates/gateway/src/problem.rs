use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sre_core::dsl::DslError;
use sre_core::engine::EngineClosed;
use sre_core::lifecycle::{LifecycleError, PackageError};
use sre_core::semantic::QueryError;

/// Error body of every failed API call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: Value,
}

/// A problem together with the HTTP status it is sent with.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub problem: Problem,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            problem: Problem {
                code: code.to_owned(),
                message: message.into(),
                detail: Value::Null,
            },
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.problem.detail = detail;
        self
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", format!("unknown {what} '{id}'"))
            .with_detail(json!({ what: id }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.problem)).into_response()
    }
}

fn dsl_detail(e: &DslError) -> Value {
    match e {
        DslError::Source(s) => json!({"line": s.line, "column": s.column, "expected": s.expected}),
        DslError::NameMismatch { line, .. } => json!({ "line": line }),
        DslError::InvalidComparator { line, column, .. } => json!({"line": line, "column": column}),
        _ => Value::Null,
    }
}

impl From<LifecycleError> for ApiError {
    fn from(e: LifecycleError) -> Self {
        let code = e.code();
        let (status, detail) = match &e {
            LifecycleError::Package(p) => match p {
                PackageError::SignatureInvalid | PackageError::UntrustedKey(_) => (StatusCode::UNAUTHORIZED, Value::Null),
                PackageError::Script(d) => (StatusCode::BAD_REQUEST, dsl_detail(d)),
                _ => (StatusCode::BAD_REQUEST, Value::Null),
            },
            LifecycleError::UnknownRule(rule) => (StatusCode::NOT_FOUND, json!({ "rule": rule })),
            LifecycleError::InvalidTransition { rule, state, action } => (
                StatusCode::CONFLICT,
                json!({"rule": rule, "state": state, "action": action}),
            ),
            LifecycleError::UnknownParam { rule, key } => (StatusCode::NOT_FOUND, json!({"rule": rule, "key": key})),
            LifecycleError::TypeMismatch { rule, key, expected, found } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"rule": rule, "key": key, "expected": expected.to_string(), "found": found.to_string()}),
            ),
            LifecycleError::Runtime(r) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"rule": r.rule, "line": r.line}),
            ),
            LifecycleError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, Value::Null),
        };
        ApiError::new(status, code, e.to_string()).with_detail(detail)
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let status = match e {
            QueryError::EmptyAggregate | QueryError::NonNumericCapability { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        let detail = match e.position() {
            Some(p) => json!({ "position": p }),
            None => Value::Null,
        };
        ApiError::new(status, e.code(), e.to_string()).with_detail(detail)
    }
}

impl From<EngineClosed> for ApiError {
    fn from(e: EngineClosed) -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "EngineClosed", e.to_string())
    }
}
