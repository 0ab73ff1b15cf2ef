//! Crate-wide error type.

use std::fmt;
use std::io;

/// Errors produced anywhere in the pipeline.
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration value.
    Config(String),
    /// A corpus with zero examples was requested or produced.
    EmptyCorpus,
    /// A prompt could not be rendered (e.g. a count exceeds the number-token range).
    Render(String),
    /// Input longer than the model context window.
    ContextOverflow { len: usize, max: usize },
    /// Malformed or inconsistent data handed to an operation.
    Data(String),
    /// Regression targets are constant; R^2 is undefined.
    DegenerateTarget,
    /// A serialized artifact failed its integrity checks.
    Corruption(String),
    /// Artifact provenance does not match its declared inputs.
    Provenance(String),
    /// Invalid intervention specification.
    InvalidSpec(String),
    Io(io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::EmptyCorpus => write!(f, "corpus is empty"),
            Error::Render(msg) => write!(f, "render error: {msg}"),
            Error::ContextOverflow { len, max } => {
                write!(f, "sequence of {len} tokens exceeds context window {max}")
            }
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::DegenerateTarget => write!(f, "degenerate regression target (zero variance)"),
            Error::Corruption(msg) => write!(f, "corrupt artifact: {msg}"),
            Error::Provenance(msg) => write!(f, "provenance mismatch: {msg}"),
            Error::InvalidSpec(msg) => write!(f, "invalid intervention spec: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
