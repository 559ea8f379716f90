use std::path::PathBuf;

/// Errors from file handling and the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] wavelatent_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Self::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 usage, 2 data or format, 3 numeric or training.
    pub fn exit_code(&self) -> i32 {
        use wavelatent_core::Error as C;
        match self {
            Self::Usage(_) | Self::Core(C::Config(_)) => 1,
            Self::Io { .. } | Self::Format { .. } => 2,
            Self::Core(C::Dimension(_) | C::Degenerate(_) | C::Family { .. }) => 2,
            Self::Core(C::Numeric(_) | C::NoConvergence { .. } | C::Diverged { .. }) => 3,
        }
    }
}
