//! # otlab
//!
//! Command-line front end and file formats for `otlab-core`: exports
//! attention patterns and transport plans as CSV and PGM, writes run
//! manifests, and drives the parallel verification suites.

pub mod commands;
pub mod config;
pub mod harness;
pub mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Process exit statuses.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const VERIFICATION: i32 = 2;
    pub const NOT_CONVERGED: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("usage: {0}")]
    Usage(String),
    #[error("verification failed: {}", .0.join(", "))]
    Verification(Vec<String>),
    #[error("sinkhorn did not converge after {iterations} sweeps (achieved eps* = {achieved:e})")]
    NotConverged { iterations: usize, achieved: f64 },
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => exit::USAGE,
            Failure::Verification(_) => exit::VERIFICATION,
            Failure::NotConverged { .. } => exit::NOT_CONVERGED,
            Failure::Other(_) => exit::USAGE,
        }
    }
}

impl From<otlab_core::Error> for Failure {
    fn from(e: otlab_core::Error) -> Self {
        match e {
            otlab_core::Error::NotConverged { iterations, achieved } => Failure::NotConverged { iterations, achieved },
            other => Failure::Other(other.into()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "otlab",
    version,
    about = "Softmax attention as dual gradient descent for entropic optimal transport"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the constructed transformer and export attention patterns
    Forward {
        #[command(flatten)]
        flags: config::Overrides,
    },
    /// Sort a list with the transformer
    Sort {
        #[command(flatten)]
        flags: config::Overrides,
    },
    /// Run dual gradient descent and export its trajectory
    Gd {
        #[command(flatten)]
        flags: config::Overrides,
    },
    /// Run Sinkhorn scaling and export the plan
    Sinkhorn {
        #[command(flatten)]
        flags: config::Overrides,
    },
    /// Run every property suite and write a JSON report
    Verify {
        #[command(flatten)]
        flags: config::Overrides,
        /// Deliberately break the weights to exercise failure reporting
        #[arg(long, hide = true, value_name = "FAULT")]
        inject_fault: Option<Fault>,
        /// Report path (default: <out>/report.json)
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Negate both value maps
    ValueSignFlip,
}

/// Runs a parsed command; output lines go to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    match cli.command {
        Command::Forward { flags } => commands::forward(&config::resolve(&flags)?, out),
        Command::Sort { flags } => commands::sort(&config::resolve(&flags)?, out),
        Command::Gd { flags } => commands::gd(&config::resolve(&flags)?, out),
        Command::Sinkhorn { flags } => commands::sinkhorn(&config::resolve(&flags)?, out),
        Command::Verify {
            flags,
            inject_fault,
            report,
        } => commands::verify(&config::resolve(&flags)?, inject_fault, report, out),
    }
}

/// Parses `args` and runs, returning the process exit status.
pub fn main_with_args<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::SUCCESS,
                _ => exit::USAGE,
            };
            let _ = if code == exit::SUCCESS {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => exit::SUCCESS,
        Err(f) => {
            let _ = writeln!(err, "otlab: {f:#}");
            f.exit_code()
        }
    }
}
