use thiserror::Error;

/// Errors raised by the simulation and recovery routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of a formula (e.g. zero object distance).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates its invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// The input carries no usable signal (all-zero pupil, flat kernel, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The sampling grid cannot represent the requested propagation.
    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A regularization-free inverse hit a zero of the transfer function.
    #[error("singular inverse: {0}")]
    Singular(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
