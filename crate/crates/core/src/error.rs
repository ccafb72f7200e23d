use std::path::PathBuf;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{}: {message}", file.display())]
    Format { file: PathBuf, message: String },
    #[error("{}: unsupported format version {found} (expected {expected})", file.display())]
    Version {
        file: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("inconsistent data: {0}")]
    Consistency(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid task: {0}")]
    Task(String),
    #[error("model: {0}")]
    Model(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
        let context = context.into();
        move |source| Error::Io { context, source }
    }

    pub(crate) fn json(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> Error {
        let context = context.into();
        move |source| Error::Json { context, source }
    }

    /// Short machine-readable category, used by the command-line tool.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Format { .. } => "format",
            Error::Version { .. } => "version",
            Error::Data(_) => "data",
            Error::Consistency(_) => "consistency",
            Error::Config(_) => "config",
            Error::Task(_) => "task",
            Error::Model(_) => "model",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }
}
