//! Command-line front end: argument parsing, config validation, run
//! manifests and subcommand dispatch.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;

use clap::Parser;

pub use commands::{Cli, Command};
pub use config::{parse_config, validate_config, RunConfig};
pub use manifest::{sha256_file, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing inputs and similar user errors.
    Usage(String),
    Config { path: PathBuf, errors: Vec<String> },
    Core(dvta::Error),
    /// A check that ran but did not pass, such as a failing gradient check.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::Failed(_) => EXIT_VALIDATION,
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Core(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => write!(f, "{m}"),
            CliError::Config { path, errors } => {
                write!(f, "invalid config {}:", path.display())?;
                for e in errors {
                    write!(f, "\n  {e}")?;
                }
                Ok(())
            }
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<dvta::Error> for CliError {
    fn from(e: dvta::Error) -> Self {
        CliError::Core(e)
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
