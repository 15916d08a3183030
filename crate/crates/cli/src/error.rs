use std::path::PathBuf;

use heatflow_core::Error as CoreError;
use serde_json::json;
use thiserror::Error;

/// Failures of the command-line front end, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, key: Option<String>, message: String },

    #[error("invalid field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Self::Io { path: path.into(), message: err.to_string() }
    }

    /// 2 for usage, config and input errors; 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(
                CoreError::ChartViolation(_)
                | CoreError::NoConvergence { .. }
                | CoreError::NotConverged { .. }
                | CoreError::StabilityGuard { .. }
                | CoreError::EmptyWindow { .. }
                | CoreError::ZeroSection,
            ) => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Parse { .. } => "ParseError",
            Self::Validation { .. } => "ValidationError",
            Self::Io { .. } => "IoError",
            Self::Usage(_) => "UsageError",
            Self::Core(e) => match e {
                CoreError::ChartViolation(_) => "ChartViolation",
                CoreError::ShapeMismatch { .. } => "ShapeMismatch",
                CoreError::BaseMismatch => "BaseMismatch",
                CoreError::StabilityGuard { .. } => "StabilityGuard",
                CoreError::NoConvergence { .. } => "NoConvergence",
                CoreError::ZeroSection => "ZeroSection",
                CoreError::InsufficientSnapshots { .. } => "InsufficientSnapshots",
                CoreError::EmptyWindow { .. } => "EmptyWindow",
                CoreError::NotConverged { .. } => "NotConverged",
                CoreError::InvalidMap(_) => "InvalidMap",
                CoreError::InvalidDescriptor(_) => "InvalidDescriptor",
            },
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut value = json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        match self {
            Self::Parse { line, column, key, .. } => {
                value["line"] = json!(line);
                value["column"] = json!(column);
                value["key"] = json!(key);
            }
            Self::Validation { field, reason } => {
                value["field"] = json!(field);
                value["reason"] = json!(reason);
            }
            Self::Io { path, .. } => value["path"] = json!(path),
            _ => {}
        }
        value
    }
}
