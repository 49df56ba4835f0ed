//! CLI error type with the documented exit codes.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Configuration or schema violation (exit 2).
    Config(String),
    /// Numerical failure inside a pipeline stage (exit 3).
    Numerical { stage: String, message: String },
    /// I/O failure (exit 4).
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical { stage, message } => {
                write!(f, "numerical failure in stage '{stage}': {message}")
            }
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Attach a stage name to a library error.
    pub fn from_stage(stage: &str, err: koopman::Error) -> Self {
        match err {
            koopman::Error::Io(e) => CliError::Io(format!("{stage}: {e}")),
            koopman::Error::Parse(m) => CliError::Config(format!("{stage}: {m}")),
            koopman::Error::Contract(m) => CliError::Config(format!("{stage}: {m}")),
            other => CliError::Numerical {
                stage: stage.to_string(),
                message: other.to_string(),
            },
        }
    }
}
