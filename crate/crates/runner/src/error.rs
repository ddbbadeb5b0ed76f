use std::path::PathBuf;

use thiserror::Error;

use nluqa_models::ModelError;

pub type Result<T> = std::result::Result<T, RunError>;

#[derive(Debug, Error)]
pub enum RunError {
    /// Bad run spec, flags or registry entries.
    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] nluqa_core::Error),

    #[error(transparent)]
    Model(ModelError),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// A unit of work failed after the run started; results written so far
    /// are kept and marked partial.
    #[error("{unit} failed: {message}")]
    Unit { unit: String, message: String },
}

impl From<ModelError> for RunError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(message) => RunError::Config(message),
            other => RunError::Model(other),
        }
    }
}

impl RunError {
    pub fn config(message: impl Into<String>) -> Self {
        RunError::Config(message.into())
    }

    pub fn io(path: impl Into<PathBuf>, e: impl ToString) -> Self {
        RunError::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }

    /// 2 for configuration and usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}
