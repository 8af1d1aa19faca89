use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the bundle file parser.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("magic mismatch: expected QTZ1, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    BadVersion(u8),
    #[error("truncated file while reading {0}")]
    Truncated(&'static str),
    #[error("unknown dtype tag {0}")]
    BadDtype(u8),
    #[error("tensor {name}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error("integer accumulator overflow risk: {0}")]
    OverflowRisk(String),
    #[error("static quantization requires a calibrated activation scale table")]
    MissingCalibration,
    #[error("invalid input: {0}")]
    Input(String),
    #[error("robustness drop is undefined for a zero unperturbed pass@1")]
    UndefinedDrop,
    #[error("lookup failed: no entry for {0:?}")]
    Lookup(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("bundle format: {0}")]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping file-context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }
}
