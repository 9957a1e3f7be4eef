use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("input not found: {0}")]
    MissingInput(PathBuf),
    #[error("config {path} has schema_version {found}, this build reads version {expected}")]
    SchemaVersionMismatch { path: PathBuf, found: i64, expected: u32 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Ingest(#[from] sslse_core::ingest::IngestError),
    #[error(transparent)]
    Imaging(#[from] sslse_core::imaging::ImagingError),
    #[error(transparent)]
    Model(#[from] sslse_core::model::ModelError),
    #[error(transparent)]
    Ssl(#[from] sslse_core::ssl::SslError),
    #[error(transparent)]
    Eval(#[from] sslse_core::eval::EvalError),
}

impl CliError {
    /// Stable tag printed in the error line.
    pub fn category(&self) -> &'static str {
        match self {
            Self::ConfigParse { .. } => "ConfigParse",
            Self::MissingInput(_) => "MissingInput",
            Self::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::Io { .. } => "Io",
            Self::Checkpoint(_) => "Checkpoint",
            Self::Ingest(_) => "Ingest",
            Self::Imaging(_) => "Imaging",
            Self::Model(_) => "Model",
            Self::Ssl(_) => "Pretrain",
            Self::Eval(_) => "Eval",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::ConfigParse { .. } | Self::SchemaVersionMismatch { .. } | Self::InvalidConfig(_) => 2,
            Self::MissingInput(_) => 3,
            _ => 1,
        }
    }
}

/// Maps an I/O failure on `path` to [`CliError::MissingInput`] when the
/// file does not exist.
pub(crate) fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path)
        } else {
            CliError::Io { path, source }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
