use std::fmt;
use std::path::Path;

use serde::Serialize;

/// Error reported by the CLI as one JSON line and by the service as a JSON
/// body.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
    /// Offending request fields, when known.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Io,
    NotFound,
    Conflict,
    Cancelled,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            fields: Vec::new(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, message)
    }

    pub fn field(path: impl Into<String>, message: impl Into<String>) -> Self {
        let path = path.into();
        let message = message.into();
        Self {
            kind: ErrorKind::Validation,
            message: format!("{path}: {message}"),
            fields: vec![FieldError { path, message }],
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {err}", path.display()))
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, message)
    }

    /// `{"error": {...}}` on a single line.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<blockdetail::Error> for CliError {
    fn from(e: blockdetail::Error) -> Self {
        match e {
            blockdetail::Error::Cancelled => Self::new(ErrorKind::Cancelled, "cancelled"),
            blockdetail::Error::Io(io) => Self::new(ErrorKind::Io, io.to_string()),
            other => Self::validation(other.to_string()),
        }
    }
}
