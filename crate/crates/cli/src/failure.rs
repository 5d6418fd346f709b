//! Command failures and their process exit codes.

use std::fmt;

use lcn4_core::Error;

/// Process exit status of a finished command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    /// Invalid configuration, arguments or input data.
    Config = 2,
    /// Training produced a non-finite loss.
    Numeric = 3,
    /// Reading or writing files failed.
    Io = 4,
}

impl Status {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            status: Status::Config,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            status: Status::Io,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NonFinite { .. } => Status::Numeric,
            Error::Io(_) | Error::Checkpoint(_) => Status::Io,
            Error::Config(_)
            | Error::Data(_)
            | Error::Sampling(_)
            | Error::Tensor(_)
            | Error::Cluster(_) => Status::Config,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e.to_string())
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;
