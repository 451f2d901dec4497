use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dependency error: {0}")]
    Dependency(String),
    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("job state mismatch: {0}")]
    JobMismatch(String),
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Core(#[from] refmix_core::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        PipelineError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn backend(backend: impl Into<String>, message: impl Into<String>) -> Self {
        PipelineError::Backend {
            backend: backend.into(),
            message: message.into(),
        }
    }

    /// Whether the error came from a model or judge service rather than
    /// from local configuration or data.
    pub fn is_backend(&self) -> bool {
        matches!(self, PipelineError::Backend { .. })
    }
}
