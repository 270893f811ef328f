use std::path::PathBuf;

use clap::Args;

use super::{open_output, parse_state, report_error, EXIT_OK, EXIT_USAGE};
use crate::error::Error;
use crate::io::{comment_line, evaluate_points, grid_points, load_archive, read_states, write_eval_rows};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Solution directory (or its solution.json).
    #[arg(long)]
    archive: PathBuf,
    /// Comma-separated state, e.g. `--state 1.5,-2`. Repeatable.
    #[arg(long = "state", allow_hyphen_values = true)]
    states: Vec<String>,
    /// CSV file with one query state per row.
    #[arg(long = "states")]
    states_file: Option<PathBuf>,
    /// Evaluate on a regular grid with this many points per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Decision stage for finite-horizon solutions.
    #[arg(long, default_value_t = 0)]
    stage: usize,
    /// Output CSV (default stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

pub fn run(args: EvalArgs) -> i32 {
    let (cfg, sol, _) = match load_archive(&args.archive) {
        Ok(a) => a,
        Err(e) => return report_error(&e),
    };
    let r = sol.cloud.dim();
    let mut points = Vec::new();
    for s in &args.states {
        match parse_state(s) {
            Ok(p) => points.push(p),
            Err(e) => return report_error(&e),
        }
    }
    if let Some(file) = &args.states_file {
        match read_states(file, r) {
            Ok(p) => points.extend(p),
            Err(e) => return report_error(&e),
        }
    }
    if let Some(n) = args.grid {
        if n < 2 {
            return report_error(&Error::Config("--grid needs at least 2 points per axis".into()));
        }
        points.extend(grid_points(&sol.problem.state_space.bounds, &[n]));
    }
    let rows = evaluate_points(&sol, args.stage, &points);
    let written = open_output(args.output.as_ref())
        .map_err(Error::from)
        .and_then(|w| write_eval_rows(w, &comment_line(&cfg), r, sol.grid.dim(), &rows));
    if let Err(e) = written {
        return report_error(&e);
    }
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} query states could not be evaluated", rows.len());
    }
    if !rows.is_empty() && failed == rows.len() {
        EXIT_USAGE
    } else {
        EXIT_OK
    }
}
