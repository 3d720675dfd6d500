use thiserror::Error;

/// Errors surfaced by the library. Variants map onto distinct CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated (shape mismatch, out-of-range label, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("malformed payload: {0}")]
    Payload(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("infeasible controlled split: {requested} novel classes requested but only {available} classes are absent from the pretraining set")]
    InfeasibleSplit { requested: usize, available: usize },

    #[error("episode sampling failed: {0}")]
    Sampling(String),

    #[error("corpus generation failed: {0}")]
    Generation(String),

    #[error("non-finite loss component `{component}` at iteration {iteration}")]
    NonFinite { iteration: usize, component: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
