use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use metaforge_core::analysis::AnalysisError;
use metaforge_core::model::ProjectError;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    /// Question, field or result ids the error refers to.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>, fields: Vec<String>) -> Self {
        Self { status, body: ErrorBody { error, message: message.into(), fields } }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} '{id}'"), vec![id.to_string()])
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message, vec![])
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message, vec![])
    }

    pub fn unprocessable(message: impl Into<String>, fields: Vec<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message, fields)
    }

    pub fn precondition_required() -> Self {
        Self::new(
            StatusCode::PRECONDITION_REQUIRED,
            "revision_required",
            "mutations need an If-Match header carrying the last seen revision",
            vec![],
        )
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        let message = e.to_string();
        match e {
            ProjectError::Validation { field, .. } => Self::unprocessable(message, vec![field]),
            ProjectError::Incomplete { report, .. } => Self::unprocessable(message, report.field_ids()),
            ProjectError::UnknownDocument(id) => Self::new(StatusCode::NOT_FOUND, "not_found", message, vec![id]),
            ProjectError::UnknownResult(id)
            | ProjectError::UnknownGroup(id)
            | ProjectError::UnknownAnnotation(id) => Self::new(StatusCode::NOT_FOUND, "not_found", message, vec![id]),
            ProjectError::StaleRevision { .. } => Self::new(StatusCode::CONFLICT, "stale_revision", message, vec![]),
            ProjectError::Locked(id) | ProjectError::DefaultGroup(id) | ProjectError::GroupNotEmpty(id) => {
                Self::new(StatusCode::CONFLICT, "conflict", message, vec![id])
            }
            ProjectError::ResultNotEligible(id)
            | ProjectError::DuplicateResultId(id)
            | ProjectError::DuplicateGroup(id)
            | ProjectError::FlagNeedsNote(id) => Self::unprocessable(message, vec![id]),
            ProjectError::ChoiceNotAllowed { .. } => Self::unprocessable(message, vec!["choice".into()]),
            ProjectError::UnsupportedVersion { .. } | ProjectError::Parse { .. } | ProjectError::Integrity(_) => {
                Self::unprocessable(message, vec![])
            }
            ProjectError::Io(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "io", message, vec![]),
        }
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        let message = e.to_string();
        match e {
            AnalysisError::UnknownResult(id) | AnalysisError::UnknownGroup(id) => Self::unprocessable(message, vec![id]),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
