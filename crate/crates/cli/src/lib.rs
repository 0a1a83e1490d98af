//! Command-line driver: `faker-air {datagen|train|eval|ablate}`.
//!
//! Configuration is layered as defaults, then `--config`, then `--set`
//! overrides, then dedicated flags. Every command writes `manifest.json`
//! into its `--out` directory.

pub mod ablate;
pub mod args;
pub mod commands;
pub mod manifest;

use std::ffi::OsString;

use clap::Parser;
use faker_air::{Error, Result};

pub use args::Cli;
pub use commands::Outcome;

pub const THREADS_ENV: &str = "FAKER_AIR_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Sizes the global worker pool from `FAKER_AIR_THREADS`. The pool can be
/// sized once per process; later calls keep the first size.
pub fn configure_threads(value: Option<&str>) -> Result<()> {
    let Some(raw) = value else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    use args::Command;
    match &cli.command {
        Command::Datagen(a) => commands::cmd_datagen(a),
        Command::Train(a) => commands::cmd_train(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Ablate(a) => ablate::cmd_ablate(a),
    }
}

/// Parses, runs and reports; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = std::env::var(THREADS_ENV).ok();
    if let Err(e) = configure_threads(threads.as_deref()) {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match execute(&cli) {
        Ok(o) => {
            for line in o.messages {
                println!("{line}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
