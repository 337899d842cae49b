use std::io;
use std::path::{Path, PathBuf};

/// Failures of the file formats and commands, grouped for exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] transunet_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: parse error at byte {offset}: {message}", path.display())]
    Parse { path: PathBuf, offset: usize, message: String },
    #[error("{}: integrity error: {message}", path.display())]
    Integrity { path: PathBuf, message: String },
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Exit-code category of an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
}

impl Category {
    pub fn exit_code(self) -> u8 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Numeric => 4,
        }
    }
}

impl Error {
    pub fn category(&self) -> Category {
        use transunet_core::Error as E;
        match self {
            Error::Core(E::Config(_) | E::Compatibility(_)) | Error::Usage(_) => Category::Config,
            Error::Core(E::NonFinite { .. } | E::Numeric { .. }) => Category::Numeric,
            Error::Core(E::Dimension(_) | E::Contract(_)) => Category::Data,
            Error::Io { .. } | Error::Parse { .. } | Error::Integrity { .. } => Category::Data,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn parse(path: &Path, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse { path: path.to_path_buf(), offset, message: message.into() }
    }

    pub(crate) fn integrity(path: &Path, message: impl Into<String>) -> Error {
        Error::Integrity { path: path.to_path_buf(), message: message.into() }
    }
}
