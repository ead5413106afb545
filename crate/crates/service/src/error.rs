use serde_json::{json, Value};

use crate::session::Step;

pub type ServiceResult<T> = Result<T, ServiceError>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),

    #[error("{op} is not allowed in step {step}")]
    IllegalStep { op: &'static str, step: Step },

    #[error("{0}")]
    BadRequest(String),

    #[error("cancelled")]
    Cancelled,

    #[error(transparent)]
    Core(#[from] sdrec_core::Error),

    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        use sdrec_core::Error as E;
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::IllegalStep { .. } => "illegal_step",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Cancelled => "cancelled",
            ServiceError::Internal(_) => "internal",
            ServiceError::Core(e) => match e {
                E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => "not_found",
                E::Io(_) => "io",
                E::Schema { .. } | E::Serde(_) => "parse_error",
                E::Invariant { .. } | E::MissingEmbedding(_) => "invalid_data",
                E::UnknownPlayer(_) => "unknown_player",
                E::InvalidRatio(_) => "invalid_ratio",
                E::EmptyCandidates => "empty_candidates",
                E::InvalidConfig(_) | E::InvalidArgument(_) | E::DimensionMismatch { .. } => "bad_request",
                E::Training(_) => "training_failed",
            },
        }
    }

    /// The JSON error body.
    pub fn body(&self) -> Value {
        let mut err = json!({ "code": self.code(), "message": self.to_string() });
        if let ServiceError::IllegalStep { op, step } = self {
            err["op"] = json!(op);
            err["step"] = json!(step);
        }
        json!({ "error": err })
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Core(e.into())
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Core(e.into())
    }
}
