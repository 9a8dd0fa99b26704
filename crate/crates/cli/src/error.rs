use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A config field failed validation; `field` is its dotted path.
    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("config field `{field}`: {} does not exist", path.display())]
    MissingPath { field: String, path: PathBuf },

    #[error("config file {}: {reason}", path.display())]
    ConfigFile { path: PathBuf, reason: String },

    #[error("bad override `{0}`: expected key=value")]
    Override(String),

    #[error("{command} needs {what}")]
    MissingInput { command: String, what: String },

    #[error("{}:{line}: {reason}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] oqgen_core::CoreError),

    #[error(transparent)]
    Model(#[from] oqgen_model::ModelError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn missing(command: &str, what: impl Into<String>) -> Self {
        CliError::MissingInput {
            command: command.to_string(),
            what: what.into(),
        }
    }

    /// Config problems exit with 2, everything else with 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. }
            | CliError::MissingPath { .. }
            | CliError::ConfigFile { .. }
            | CliError::Override(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
