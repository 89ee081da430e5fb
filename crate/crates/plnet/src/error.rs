use std::path::PathBuf;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or settings that cannot be combined (kernel/channel mismatch, K mismatch, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-supplied value outside its valid range (label out of range, ...).
    #[error("input error: {0}")]
    Input(String),

    /// An operation used in a way its contract forbids (backward on non-scalar, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A dataset or clustering input too small for the request.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// File could not be read or decoded.
    #[error("ingestion error: {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    /// Manifest violates a dataset invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Retrieval evaluation cannot proceed (empty gallery, ...).
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at iteration {iter}: {detail}")]
    NonFiniteLoss { iter: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
