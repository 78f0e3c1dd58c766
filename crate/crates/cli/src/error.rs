use effect_core::EngineError;
use thiserror::Error;

/// Failures surfaced by the batch runner, split by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: malformed CSV or config, unknown labels, unmet preconditions.
    #[error("{0}")]
    Validation(String),
    /// A fit or query failed numerically.
    #[error("{0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 1,
            CliError::Numeric(_) => 2,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
