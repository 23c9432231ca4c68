use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use forge_core::instruction::ClauseError;
use forge_core::refine::{CommandFailure, RefineError};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("volume has {voxels} voxels, above the cap of {cap}")]
    TooLarge { voxels: usize, cap: usize },
    #[error("no clause could be applied{}", summarize(clause_errors, command_errors))]
    Rejected {
        clause_errors: Vec<ClauseError>,
        command_errors: Vec<CommandFailure>,
    },
    #[error("normalization failed: {0}")]
    Normalize(String),
    #[error("internal error: {0}")]
    Internal(String),
}

fn summarize(clauses: &[ClauseError], commands: &[CommandFailure]) -> String {
    let parts: Vec<String> = clauses
        .iter()
        .map(ToString::to_string)
        .chain(commands.iter().map(|f| format!("clause {}: {}", f.clause, f.message)))
        .collect();
    if parts.is_empty() {
        String::new()
    } else {
        format!(": {}", parts.join("; "))
    }
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ApiError::Rejected { .. } | ApiError::Normalize(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<RefineError> for ApiError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Rejected {
                clause_errors,
                command_errors,
            } => ApiError::Rejected {
                clause_errors,
                command_errors,
            },
            RefineError::StepOutOfRange { .. } => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.to_string()});
        if let ApiError::Rejected {
            clause_errors,
            command_errors,
        } = &self
        {
            body["clause_errors"] = json!(clause_errors);
            body["command_errors"] = json!(command_errors);
        }
        (self.status(), Json(body)).into_response()
    }
}
