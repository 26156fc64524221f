use std::io;
use std::path::PathBuf;

use pane_gnn_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("unknown {what} id(s): {}", ids.join(", "))]
    UnknownIds { what: &'static str, ids: Vec<String> },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// Stable machine-readable category for the one-line error report.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "parse",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::UnknownIds { .. } => "unknown-id",
            CliError::Core(e) => match e {
                CoreError::Shape { .. } => "shape",
                CoreError::NonFiniteLoss(_) => "nonfinite",
                CoreError::InvalidArgument(_) => "argument",
                _ => "model",
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
