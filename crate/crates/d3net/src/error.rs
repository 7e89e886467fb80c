//! Error type shared across the library.

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor ops, block builders, and analyzers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Runtime shape disagreement (channel/spatial/batch mismatch).
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Structurally invalid configuration or weight layout.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A name lookup (preset, op, graph node) failed.
    #[error("unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },
    /// A scalar argument is out of its domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A computation produced or encountered non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn lookup(kind: &'static str, name: impl Into<String>) -> Self {
        Error::Lookup {
            kind,
            name: name.into(),
        }
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
