use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{}: line {line}: {msg}", path.display())]
    Format { path: PathBuf, line: u64, msg: String },

    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },

    #[error(transparent)]
    Core(#[from] dp_batcher_core::Error),

    /// Well-formed input that the requested run cannot use.
    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Self::Csv { path: path.into(), source }
    }

    /// True for problems with the user's input files rather than the environment.
    pub fn is_input_error(&self) -> bool {
        match self {
            Self::Csv { source, .. } => !source.is_io_error(),
            Self::Io { source, .. } => source.kind() == io::ErrorKind::NotFound,
            Self::Format { .. } | Self::Input(_) | Self::Core(_) => true,
            Self::Json { .. } | Self::Runtime(_) => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
