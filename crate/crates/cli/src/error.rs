use std::fmt;

use ctxext_core::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Mode(_) => EXIT_CONFIG,
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Io(_) => EXIT_FAILURE,
            _ => EXIT_VALIDATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e).into()
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Unwraps a resolved setting that has no default.
pub fn required<'a, T>(value: &'a Option<T>, key: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::config(format!("missing required setting `{key}` (flag --{} or config file)", key.replace('_', "-"))))
}
