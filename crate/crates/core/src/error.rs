//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. The variants are
//! coarse categories rather than per-module enums so that callers (notably the
//! CLI) can map them onto stable exit codes without matching on message text.

use thiserror::Error;

/// Errors produced by library operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition (shape mismatch,
    /// out-of-range scalar, empty input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The gradient engine was asked to differentiate through a node whose
    /// operation has no registered backward rule.
    #[error("unsupported operation in gradient graph: {0}")]
    UnsupportedOp(String),

    /// An inverse transform produced an imaginary residual above the allowed
    /// bound, signalling a broken spectrum symmetry upstream.
    #[error("non-real reconstruction: imaginary residual {residual:.3e} exceeds {limit:.3e}")]
    NonRealReconstruction { residual: f64, limit: f64 },

    /// A vector that must have positive norm was (numerically) zero.
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    /// A training loop produced a non-finite loss or parameter.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// A library operation produced a non-finite value outside of any
    /// documented error contract.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    /// Shorthand used throughout the crate.
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
