//! Error type shared by every module of the numerical core.

use alloc::string::String;
use core::fmt;

/// Errors raised by tensor, tape, kernel, model, sampling, training and
/// metric operations.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Shapes of the operands do not fit the operation.
    ShapeMismatch { op: &'static str, detail: String },
    /// An argument violates the operation's preconditions.
    InvalidArgument { op: &'static str, detail: String },
    /// A non-finite value (NaN or infinity) was produced; names the
    /// operation so the failure is attributable.
    NonFinite { op: &'static str },
    /// The training/evaluation protocol cannot be formed from the data
    /// (empty modality cells, missing classes, leaking subjects, ...).
    Protocol { detail: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            CoreError::InvalidArgument { op, detail } => {
                write!(f, "invalid argument to {op}: {detail}")
            }
            CoreError::NonFinite { op } => {
                write!(f, "non-finite value produced by {op}")
            }
            CoreError::Protocol { detail } => write!(f, "protocol error: {detail}"),
        }
    }
}

pub type Result<T> = core::result::Result<T, CoreError>;

impl CoreError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::ShapeMismatch { op, detail: detail.into() }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::InvalidArgument { op, detail: detail.into() }
    }

    pub fn protocol(detail: impl Into<String>) -> Self {
        CoreError::Protocol { detail: detail.into() }
    }
}
