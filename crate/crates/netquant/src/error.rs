use std::path::PathBuf;

/// Errors from file handling, configuration and the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}, column {column}: {message}")]
    Data {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: expected {expected} {what}, found {found}")]
    Shape {
        path: PathBuf,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] netquant_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code: 2 for bad input or usage, 1 for estimation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) if !is_input_error(e) => 1,
            _ => 2,
        }
    }
}

fn is_input_error(e: &netquant_core::Error) -> bool {
    matches!(
        e,
        netquant_core::Error::Domain(_) | netquant_core::Error::Dimension { .. }
    )
}
