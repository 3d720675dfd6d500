use std::fmt;
use std::process::ExitCode;

use fewshot_tad::Error;

pub const CONFIG: u8 = 2;
pub const IO: u8 = 3;
pub const INFEASIBLE_SPLIT: u8 = 4;
pub const NUMERIC: u8 = 5;
pub const GRADCHECK: u8 = 6;

/// A failed command: message for stderr plus the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Header(_) | Error::Payload(_) | Error::Checksum { .. } => IO,
            Error::InfeasibleSplit { .. } => INFEASIBLE_SPLIT,
            Error::NonFinite { .. } => NUMERIC,
            Error::Config { .. }
            | Error::Contract(_)
            | Error::Sampling(_)
            | Error::Generation(_) => CONFIG,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(IO, format!("I/O error: {e}"))
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;
