//! Library side of the `pnpjko` driver: configuration, artifacts and subcommands.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_DIAGNOSTICS: i32 = 3;

/// A failure carrying the process exit code it maps to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        Self { code: EXIT_SOLVER, message: message.into() }
    }

    pub fn diagnostics(message: impl Into<String>) -> Self {
        Self { code: EXIT_DIAGNOSTICS, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}
