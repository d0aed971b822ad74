use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not parse configuration: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("`{key}`: expected {expected}, found {found}")]
    Type { key: String, expected: String, found: String },
    #[error("`{key}`: {message}")]
    Range { key: String, message: String },
    #[error("bad override: {0}")]
    Override(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] fbis_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RunError {
    /// Process exit status: 2 for configuration errors, 3 for faults while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Core(fbis_core::Error::InvalidArgument(_) | fbis_core::Error::DimensionMismatch { .. }) => 2,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Core(fbis_core::Error::Numerical(_)) => "numerical",
            RunError::Core(fbis_core::Error::InvalidArgument(_) | fbis_core::Error::DimensionMismatch { .. }) => "invalid_argument",
            RunError::Core(_) | RunError::Io(_) | RunError::Csv(_) | RunError::Json(_) => "io",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord { kind: self.kind(), message: self.to_string(), exit_code: self.exit_code() }
    }
}

/// Written to `error.json` next to the `FAILED` marker.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
}
