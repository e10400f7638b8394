use hbtm_core::HbtmError;
use thiserror::Error;

/// Failure of a CLI command, carrying enough context to pick an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: HbtmError,
    },

    #[error(transparent)]
    Core(#[from] HbtmError),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn stage(stage: impl Into<String>) -> impl FnOnce(HbtmError) -> CliError {
        let stage = stage.into();
        move |source| CliError::Stage { stage, source }
    }

    /// 2 for configuration problems, 4 for numerical failures, 3 for anything
    /// wrong with the data.
    pub fn exit_code(&self) -> i32 {
        let core = match self {
            CliError::Config(_) => return 2,
            CliError::Stage { source, .. } => source,
            CliError::Core(e) => e,
        };
        if core.is_numerical() {
            4
        } else if matches!(core, HbtmError::InvalidConfig(_)) {
            2
        } else {
            3
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
