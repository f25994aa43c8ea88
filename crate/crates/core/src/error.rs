use thiserror::Error;

use crate::region::RegionStage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure talking to an external model service.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Connection, timeout or body-decoding failure.
    #[error("backend `{backend}` transport failure: {message}")]
    Transport { backend: String, message: String },
    /// The service answered with a non-success HTTP status.
    #[error("backend `{backend}` returned status {status}: {body}")]
    Status {
        backend: String,
        status: u16,
        body: String,
    },
}

impl BackendError {
    pub fn transport(backend: impl Into<String>, message: impl ToString) -> Self {
        BackendError::Transport {
            backend: backend.into(),
            message: message.to_string(),
        }
    }

    pub fn status(backend: impl Into<String>, status: u16, body: impl Into<String>) -> Self {
        BackendError::Status {
            backend: backend.into(),
            status,
            body: body.into(),
        }
    }

    pub fn backend(&self) -> &str {
        match self {
            BackendError::Transport { backend, .. } | BackendError::Status { backend, .. } => {
                backend
            }
        }
    }

    /// Transport failures and 5xx/429 responses are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Status { status, .. } => *status >= 500 || *status == 429,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid state: {0}")]
    State(String),

    /// Another step holds the session; retrying later may succeed.
    #[error("session `{0}` is busy")]
    Busy(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("malformed model output for `{template}` after {attempts} attempt(s): {message}")]
    Format {
        template: String,
        attempts: u32,
        message: String,
    },

    #[error("score out of range for `{template}` after {attempts} attempt(s): {message}")]
    ScoreRange {
        template: String,
        attempts: u32,
        message: String,
    },

    #[error("no pending ambiguity named `{0}`")]
    UnknownElement(String),

    #[error("region extraction failed after stages {attempted:?}")]
    RegionExtraction { attempted: Vec<RegionStage> },

    #[error("expected {expected} scores, got {actual}")]
    Arity { expected: usize, actual: usize },

    #[error("dimension mismatch: image is {image:?}, mask is {mask:?}")]
    DimensionMismatch { image: (u32, u32), mask: (u32, u32) },

    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),

    #[error("sequence error for session {session_id}: expected seq {expected}, got {actual}")]
    Sequence {
        session_id: String,
        expected: u64,
        actual: u64,
    },

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("corrupt event log for session {session_id} at seq {seq}: {message}")]
    CorruptLog {
        session_id: String,
        seq: u64,
        message: String,
    },

    #[error("pipeline failed for session {session_id}: {source}")]
    Pipeline {
        session_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("image codec error: {0}")]
    Image(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
