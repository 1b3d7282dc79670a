//! Command implementations behind the `mowe` binary.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.

pub mod commands;
pub mod config;

use std::fmt;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Invalid or inconsistent configuration.
    Config(String),
    /// A library error; its kind decides the exit code.
    Lib(mowe::Error),
    /// A numerical check did not pass.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_INPUT,
            CliError::Lib(mowe::Error::NonFinite(_) | mowe::Error::Evaluation(_)) => EXIT_NUMERIC,
            CliError::Lib(_) => EXIT_INPUT,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mowe::Error> for CliError {
    fn from(e: mowe::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}
