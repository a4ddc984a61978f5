use thiserror::Error;

/// Errors raised by the simulator and its statistics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value violates its constraint. `key` names the offending field.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// An argument is outside the domain of the operation (negative time, negative exponent, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    /// The state became non-finite. Carries the step index and the time at which it happened.
    #[error("blow-up at step {step} (t = {time}): non-finite state")]
    BlowUp { step: usize, time: f64 },

    #[error("empty sample window: {0}")]
    EmptyWindow(String),

    #[error("bin edges differ between measures")]
    EdgesMismatch,

    #[error("need at least {needed} paths, got {got}")]
    InsufficientPaths { needed: usize, got: usize },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Domain(_) => "domain",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::BlowUp { .. } => "blow_up",
            Error::EmptyWindow(_) => "empty_window",
            Error::EdgesMismatch => "edges_mismatch",
            Error::InsufficientPaths { .. } => "insufficient_paths",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
