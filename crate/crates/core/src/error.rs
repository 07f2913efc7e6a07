use thiserror::Error;

/// Errors raised by the coding, decoding and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the domain of the quantity being computed.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural constraint (divisibility, band width, shape) is violated.
    #[error("invalid parameter: {0}")]
    Validation(String),

    /// Vector or matrix dimensions do not conform.
    #[error("shape mismatch: expected {expected}, got {got} ({what})")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A dense operator would exceed the configured element budget.
    #[error("dense operator needs {needed} elements, budget is {budget}")]
    MemoryBudget { needed: u128, budget: u128 },

    /// The decoder produced non-finite values or its residual blew up.
    #[error("decoder diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
