//! The `pdp` command-line tool.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or configuration error,
//! 3 solver-flagged outcome (no convergence, every particle infeasible, or a
//! state with no usable control).

mod eval;
mod rollout;
mod solve;
mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pdp", version, about = "Meshless particle dynamic programming", args_override_self = true)]
pub struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the problem described by a config file and export all artifacts.
    Solve(solve::SolveArgs),
    /// Evaluate a solved archive at query states.
    Eval(eval::EvalArgs),
    /// Run oracle batteries.
    Verify(verify::VerifyArgs),
    /// Simulate the closed loop of a solved archive.
    Rollout(rollout::RolloutArgs),
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::Archive(_) | Error::OutsideStateSpace { .. } => EXIT_USAGE,
        Error::AllInfeasible
        | Error::NotConverged { .. }
        | Error::InfeasibleState { .. }
        | Error::NoSupportOverlap { .. }
        | Error::InvalidCost { .. } => EXIT_SOLVER,
        _ => EXIT_INTERNAL,
    }
}

/// Loads a config from a path; `example1` and `example2` name the bundled ones.
pub fn load_config(path: &std::path::Path) -> crate::Result<RunConfig> {
    if !path.exists() {
        match path.to_str() {
            Some("example1") => return RunConfig::from_toml_str(crate::config::EXAMPLE1),
            Some("example2") => return RunConfig::from_toml_str(crate::config::EXAMPLE2),
            _ => {}
        }
    }
    RunConfig::from_path(path)
}

pub(crate) fn parse_state(text: &str) -> crate::Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad state coordinate {t:?}: {e}")))
        })
        .collect()
}

pub(crate) fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Entry point; returns the process exit code.
pub fn main() -> i32 {
    main_with(std::env::args_os())
}

pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match cli.command {
        Command::Solve(a) => solve::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Verify(a) => verify::run(a),
        Command::Rollout(a) => rollout::run(a),
    }
}

/// Output destination: a file, or stdout when absent or `-`.
pub(crate) fn open_output(path: Option<&PathBuf>) -> std::io::Result<Box<dyn std::io::Write>> {
    match path {
        Some(p) if p.as_os_str() != "-" => Ok(Box::new(std::io::BufWriter::new(std::fs::File::create(p)?))),
        _ => Ok(Box::new(std::io::BufWriter::new(std::io::stdout().lock()))),
    }
}
