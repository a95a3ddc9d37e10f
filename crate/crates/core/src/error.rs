use thiserror::Error;

/// Errors raised by shape, metric, and matching operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or inconsistent input values.
    #[error("invalid input: {0}")]
    Input(String),

    /// A mesh element is degenerate or inverted.
    #[error("degenerate geometry at element {element}: {reason}")]
    Geometry { element: usize, reason: String },

    /// The kernel family lacks the smoothness an operation needs.
    #[error("kernel capability: {0}")]
    Capability(String),

    /// Incompatible combination of model, shape, and settings.
    #[error("configuration: {0}")]
    Config(String),

    /// Linear solve failure or non-finite values.
    #[error("numeric failure{}: {message}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Numeric { step: Option<usize>, message: String },

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric {
            step: None,
            message: msg.into(),
        }
    }

    pub(crate) fn geometry(element: usize, reason: impl Into<String>) -> Self {
        Error::Geometry {
            element,
            reason: reason.into(),
        }
    }

    /// Attach a time-step index to a numeric error.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Numeric { message, .. } => Error::Numeric {
                step: Some(step),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
