//! The `lapace` command line tool and its HTTP service.

pub mod commands;
pub mod server;

use std::ffi::OsString;

use clap::Parser;

pub use commands::{Cli, Command};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const VALIDATION: i32 = 2;
}

/// A failed command: the message for stderr and the exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: exit::USAGE, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: exit::VALIDATION, message: message.into() }
    }
}

impl From<lapace_core::Error> for Failure {
    fn from(e: lapace_core::Error) -> Self {
        use lapace_core::Error::*;
        match e {
            NotRecourseReady(_) | Infeasible(_) | NoFlip { .. } => Failure::validation(e.to_string()),
            _ => Failure::usage(e.to_string()),
        }
    }
}

/// Parses `args` and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => exit::OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
