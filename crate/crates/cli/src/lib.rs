//! Command-line front end for the fusion network: image and report files,
//! training runs and latency benchmarks.

pub mod bench;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod image_io;
pub mod pipeline;
pub mod report;

pub use bench::{BenchReport, Timing};
pub use error::{CliError, CliResult};
pub use report::{ScoreMode, ScoreReport, ScoreRow};

use clap::Parser;

/// Parses `args` and runs the subcommand, returning the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let parsed = match cli::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(parsed.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
