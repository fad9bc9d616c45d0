use std::fmt;
use std::path::Path;

use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core { context: String, source: influx::Error },
    Io { path: String, source: std::io::Error },
    Replay(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Core { source, .. } => source.kind(),
            CliError::Io { .. } => "IoError",
            CliError::Replay(_) => "ReplayMismatch",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Core { context, .. } = self {
            v["context"] = json!(context);
        }
        v
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Core { context, source } => write!(f, "{context}: {source}"),
            CliError::Io { path, source } => write!(f, "{path}: {source}"),
            CliError::Replay(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError>;
}

impl<T> Context<T> for influx::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}
