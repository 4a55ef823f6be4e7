use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ExpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ExpError {
    #[error(transparent)]
    Core(#[from] ntk_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: bad {field}: {detail}", path.display())]
    Format {
        path: PathBuf,
        field: String,
        detail: String,
    },

    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },

    #[error("configuration: {0}")]
    Config(String),
}

impl ExpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ExpError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, field: impl Into<String>, detail: impl Into<String>) -> Self {
        ExpError::Format {
            path: path.into(),
            field: field.into(),
            detail: detail.into(),
        }
    }

    /// Process exit status: 1 for contract and configuration violations, 2
    /// for I/O and file-format problems, 3 when training diverged.
    pub fn exit_code(&self) -> u8 {
        match self {
            ExpError::Core(ntk_core::Error::Diverged { .. }) => 3,
            ExpError::Core(_) | ExpError::Config(_) => 1,
            ExpError::Io { .. } | ExpError::Format { .. } | ExpError::Csv { .. } => 2,
        }
    }
}
