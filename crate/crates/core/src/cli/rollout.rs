use std::path::PathBuf;

use clap::Args;

use super::{open_output, parse_state, report_error, EXIT_OK};
use crate::bellman::{simulate_rollout, RolloutOptions, Termination};
use crate::error::Error;
use crate::io::{comment_line, load_archive, write_rollout};
use crate::model::StateVector;

#[derive(Debug, Args)]
pub struct RolloutArgs {
    /// Solution directory (or its solution.json).
    #[arg(long)]
    archive: PathBuf,
    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    #[arg(long)]
    steps: usize,
    /// Noise seed (default: the archive's noise seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Follow the nominal dynamics without process noise.
    #[arg(long)]
    no_noise: bool,
    /// Output CSV (default stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

pub fn run(args: RolloutArgs) -> i32 {
    let (cfg, sol, _) = match load_archive(&args.archive) {
        Ok(a) => a,
        Err(e) => return report_error(&e),
    };
    let x0 = match parse_state(&args.x0).and_then(StateVector::new) {
        Ok(x) if x.dim() == sol.cloud.dim() => x,
        Ok(x) => {
            return report_error(&Error::Dimension {
                what: "x0",
                expected: sol.cloud.dim(),
                got: x.dim(),
            })
        }
        Err(e) => return report_error(&e),
    };
    let seed = args.seed.unwrap_or(cfg.solver.seeds.noise);
    let rollout = match simulate_rollout(&sol, &x0, args.steps, seed, RolloutOptions { noise: !args.no_noise }) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    let written = open_output(args.output.as_ref())
        .map_err(Error::from)
        .and_then(|w| write_rollout(w, &comment_line(&cfg), sol.cloud.dim(), sol.grid.dim(), &rollout));
    if let Err(e) = written {
        return report_error(&e);
    }
    if rollout.termination != Termination::Completed {
        eprintln!("rollout stopped early: {:?}", rollout.termination);
    }
    EXIT_OK
}
