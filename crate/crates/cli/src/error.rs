use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Config(String),

    #[error("missing input {0}")]
    MissingFile(String),

    #[error("stale artifact: {0}")]
    Stale(String),

    #[error("{stage}: {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: flexsim_core::Error,
    },

    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::MissingFile(_) | CliError::Stale(_) => 2,
            CliError::Core { source, .. } => match source {
                e if e.is_data_error() => 3,
                flexsim_core::Error::Io { .. } | flexsim_core::Error::Argument(_) => 2,
                _ => 1,
            },
            CliError::Internal(_) => 1,
        }
    }
}

/// Tag a core error with the stage it came from.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for flexsim_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { stage, source })
    }
}
