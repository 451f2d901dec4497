use refmix_pipeline::PipelineError;
use thiserror::Error;

use crate::config::ConfigErrors;

pub const EXIT_OK: u8 = 0;
/// A property check or validation found a violation.
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
/// Backend or network failure with nothing produced.
pub const EXIT_BACKEND: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error("{0}")]
    Failed(String),
    #[error("{context}: {source}")]
    Pipeline {
        context: String,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Core(#[from] refmix_core::Error),
}

impl From<PipelineError> for CliError {
    fn from(source: PipelineError) -> Self {
        CliError::Pipeline {
            context: "error".into(),
            source,
        }
    }
}

impl CliError {
    pub fn in_context(context: impl Into<String>) -> impl FnOnce(PipelineError) -> CliError {
        let context = context.into();
        move |source| CliError::Pipeline { context, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAILURE,
            CliError::Pipeline { source, .. } => match source {
                PipelineError::Backend { .. } => EXIT_BACKEND,
                PipelineError::Integrity(_) => EXIT_FAILURE,
                PipelineError::Core(e) => core_code(e),
                _ => EXIT_USAGE,
            },
            CliError::Core(e) => core_code(e),
        }
    }
}

fn core_code(e: &refmix_core::Error) -> u8 {
    use refmix_core::Error as E;
    match e {
        E::Config(_) | E::Layout(_) | E::Checkpoint(_) => EXIT_USAGE,
        E::Dimension { .. } | E::Contract(_) | E::NonFinite(_) => EXIT_FAILURE,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
