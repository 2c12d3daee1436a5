//! Harness error type, mapped onto the CLI exit-code contract:
//! 1 usage, 2 validation, 3 runtime.

use std::fmt;

use kadapt_core::CoreError;

#[derive(Debug)]
pub enum HarnessError {
    /// Bad command line: unknown subcommand, missing or malformed flags.
    Usage(String),
    /// Inputs that fail their contracts: manifests, configs, checkpoints,
    /// protocol preconditions.
    Validation(String),
    /// Failures while doing the work: IO, training aborts.
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Validation(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        HarnessError::Usage(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        HarnessError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        HarnessError::Runtime(msg.into())
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Usage(m) => write!(f, "usage error: {m}"),
            HarnessError::Validation(m) => write!(f, "validation error: {m}"),
            HarnessError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
