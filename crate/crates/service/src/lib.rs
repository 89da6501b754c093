//! File-backed store, job runner and HTTP API around the crisis-core
//! pipeline.

pub mod api;
pub mod config;
pub mod jobs;
pub mod pipeline;
pub mod store;

use crisis_core::reportgen::ReportError;
use serde::{Deserialize, Serialize};

pub use api::{router, AppState};
pub use config::Config;
pub use jobs::{JobKind, JobRecord, JobRunner, JobStatus};
pub use pipeline::Pipeline;
pub use store::{Kind, Store};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("pipeline error: {0}")]
    Pipeline(String),
    #[error("upstream model error: {0}")]
    Upstream(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Config(_) => "config",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Unprocessable(_) => "unprocessable",
            ServiceError::Pipeline(_) => "pipeline",
            ServiceError::Upstream(_) => "upstream",
            ServiceError::Io(_) => "io",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn body(&self) -> ErrorBody {
        let message = match self {
            ServiceError::NotFound(_) => "resource not found",
            ServiceError::BadRequest(_) => "malformed request",
            ServiceError::Unprocessable(_) => "request cannot be processed",
            ServiceError::Conflict(_) => "conflicting request",
            ServiceError::Config(_) => "configuration error",
            ServiceError::Upstream(_) => "model endpoint failed",
            ServiceError::Pipeline(_) | ServiceError::Io(_) | ServiceError::Internal(_) => "internal error",
        };
        ErrorBody { code: self.code().into(), message: message.into(), detail: self.to_string() }
    }
}

impl From<ReportError> for ServiceError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Validation(_) => ServiceError::BadRequest(e.to_string()),
            ReportError::Budget { .. } => ServiceError::Unprocessable(e.to_string()),
            ReportError::Gateway(_) => ServiceError::Upstream(e.to_string()),
        }
    }
}

/// JSON error payload of every failed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: String,
}
