use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A data object violates its structural invariants.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// An iterative solver failed to reach tolerance.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Exact enumeration would exceed the configured number of atoms.
    #[error("atom budget exceeded: {atoms} atoms > budget {budget}")]
    AtomBudget { atoms: f64, budget: f64 },

    #[error("conditioning event has zero probability")]
    EmptyEvent,

    /// A flattening precondition does not hold.
    #[error("flattening condition violated: {0}")]
    Flattening(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
