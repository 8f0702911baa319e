//! Command-line front end for the solidarity toolkit.
//!
//! Every command writes a JSON run report (inputs and outputs with SHA-256
//! digests, seeds, config, warnings). Exit codes: 0 success, 1 usage error,
//! 2 data or runtime error.

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

pub mod commands;
pub mod config;
pub mod data;
pub mod mock;
pub mod pipeline;
pub mod pool;
pub mod run;
pub mod splits;

pub use commands::Cli;
pub use run::UsageError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Exit code for an error: usage errors anywhere in the chain map to 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.downcast_ref::<UsageError>().is_some()) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match commands::execute(&cli) {
        Ok(report) => {
            log::info!("report written to {}", report.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
