use std::fmt;
use std::path::PathBuf;

/// Failure to parse a Text-as-Mask string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the input where the problem was detected.
    pub position: usize,
    pub reason: String,
}

impl ParseError {
    pub(crate) fn new(position: usize, reason: impl Into<String>) -> Self {
        Self {
            position,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at byte {}: {}", self.position, self.reason)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Range(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("dataset error: {0}")]
    Dataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Short stable identifier of the error class, used in machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Range(_) => "range",
            Error::Dimension(_) => "dimension",
            Error::Parse(_) => "parse",
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Schema { .. } => "schema",
            Error::Image { .. } => "image",
            Error::Dataset(_) => "dataset",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
