use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The configuration is malformed or inconsistent. Nothing was run.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ouflow_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}
