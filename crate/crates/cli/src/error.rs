use rmps_core::LabError;
use thiserror::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CAP: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing required field `{field}`{context}")]
    MissingField { field: &'static str, context: String },

    #[error("{0}")]
    Usage(String),

    #[error("cannot read config {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Lab(#[from] LabError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn missing(field: &'static str, context: impl Into<String>) -> Self {
        CliError::MissingField { field, context: context.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingField { .. } | CliError::Usage(_) | CliError::Config { .. } => EXIT_USAGE,
            CliError::Lab(LabError::CapExceeded { .. }) => EXIT_CAP,
            CliError::Lab(LabError::GapConditionFailed { .. } | LabError::Singular(_)) => EXIT_RUNTIME,
            CliError::Lab(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_RUNTIME,
        }
    }

    /// Extra guidance printed after the message.
    pub fn hint(&self) -> Option<String> {
        match self {
            CliError::Lab(LabError::CapExceeded { cap, .. }) => Some(format!("advised maximum: {cap}")),
            _ => None,
        }
    }
}
