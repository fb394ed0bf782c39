use std::fmt;

use crate::checkpoint::CheckpointError;
use crate::io::IoError;

/// Process exit status for a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad configuration, bad input file, or a stage run out of order.
    Validation = 1,
    /// Everything else: numerical failure, write errors, crashed workers.
    Runtime = 2,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn validation(e: impl Into<anyhow::Error>) -> Self {
        CliError {
            kind: ExitKind::Validation,
            error: e.into(),
        }
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        CliError {
            kind: ExitKind::Runtime,
            error: e.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        CliError {
            kind: self.kind,
            error: self.error.context(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<afg_core::Error> for CliError {
    fn from(e: afg_core::Error) -> Self {
        use afg_core::Error as E;
        match e {
            E::Config(_) | E::Invariant { .. } | E::Precondition(_) => CliError::validation(e),
            E::Shape { .. } | E::UnknownParam(_) | E::Numerics(_) => CliError::runtime(e),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match &e {
            IoError::Io { .. } if !e.is_missing() => CliError::runtime(e),
            _ => CliError::validation(e),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(inner) => inner.into(),
            CheckpointError::Io { ref source, .. } if source.kind() != std::io::ErrorKind::NotFound => {
                CliError::runtime(e)
            }
            other => CliError::validation(other),
        }
    }
}
