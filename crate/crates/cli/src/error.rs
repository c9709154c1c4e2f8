use thiserror::Error;

/// Failures surfaced by the command-line harness, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure{}: {message}", stage.map(|s| format!(" in {s}")).unwrap_or_default())]
    Numerical { stage: Option<&'static str>, message: String },

    #[error("I/O error: {0}")]
    Io(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Tags a library error with the pipeline stage that raised it.
    pub fn at(stage: &'static str, err: epinn::Error) -> Self {
        if err.is_numerical() {
            CliError::Numerical {
                stage: Some(stage),
                message: err.to_string(),
            }
        } else {
            CliError::Config(format!("{stage}: {err}"))
        }
    }
}

impl From<epinn::Error> for CliError {
    fn from(err: epinn::Error) -> Self {
        if err.is_numerical() {
            CliError::Numerical {
                stage: None,
                message: err.to_string(),
            }
        } else {
            CliError::Config(err.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            CliError::Io(err.to_string())
        } else {
            CliError::Config(format!("malformed JSON: {err}"))
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(err: csv::Error) -> Self {
        if err.is_io_error() {
            CliError::Io(err.to_string())
        } else {
            CliError::Config(format!("malformed CSV: {err}"))
        }
    }
}
