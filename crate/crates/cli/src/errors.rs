//! Error names and their HTTP statuses.

use promptloom_core::session::SessionError;
use promptloom_core::Error;
use serde::Serialize;

/// Failures surfaced by the CLI and the service. Engine errors keep their
/// module error name; the rest belong to the interface itself.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Engine(#[from] Error),
    #[error("malformed request: {0}")]
    InvalidRequest(String),
    #[error("a job is already queued or running for session {0}")]
    JobInFlight(String),
    #[error("job queue is full")]
    QueueFull,
}

impl From<SessionError> for AppError {
    fn from(e: SessionError) -> Self {
        AppError::Engine(e.into())
    }
}

impl AppError {
    pub fn name(&self) -> &'static str {
        match self {
            AppError::Engine(e) => e.name(),
            AppError::InvalidRequest(_) => "InvalidRequest",
            AppError::JobInFlight(_) => "JobInFlight",
            AppError::QueueFull => "QueueFull",
        }
    }

    pub fn status(&self) -> u16 {
        status_for(self.name())
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { error: self.name().to_string(), detail: self.to_string() }
    }
}

/// Wire shape of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

/// Every error name the CLI or service can report, with its HTTP status.
pub const ERROR_TABLE: &[(&str, u16)] = &[
    ("AuthError", 500),
    ("RateLimited", 500),
    ("ProviderError", 500),
    ("Timeout", 500),
    ("DuplicateKey", 400),
    ("InvalidConfig", 400),
    ("ExtractionParseError", 500),
    ("ClassificationError", 500),
    ("SchemaError", 400),
    ("SelectionError", 500),
    ("BudgetTooSmall", 400),
    ("GenerationStalled", 500),
    ("SplitError", 400),
    ("DatasetFormatError", 400),
    ("LengthMismatch", 400),
    ("EmptyExampleSet", 400),
    ("MetaParseError", 500),
    ("ProposalParseError", 500),
    ("EmptyValidationSet", 400),
    ("NotFound", 404),
    ("StorageError", 500),
    ("SchemaVersionMismatch", 500),
    ("OffsetOutOfRange", 400),
    ("UnknownTarget", 400),
    ("SelectionMismatch", 400),
    ("NoUnresolvedFeedback", 409),
    ("ReoptimizationNotRequired", 409),
    ("NothingToJudge", 400),
    ("JudgeParseError", 500),
    ("InvalidRequest", 400),
    ("JobInFlight", 409),
    ("QueueFull", 503),
    ("InternalError", 500),
];

pub fn status_for(name: &str) -> u16 {
    ERROR_TABLE.iter().find(|(n, _)| *n == name).map_or(500, |(_, s)| *s)
}
