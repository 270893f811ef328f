use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use super::{exit_code, load_config, report_error, EXIT_OK, EXIT_SOLVER};
use crate::config::{ControlsConfig, InitConfig, RunConfig, SolveMode};
use crate::error::{Error, Result};
use crate::io::{write_artifacts, Report};
use crate::run::run as run_solve;

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Config file (TOML, or JSON by extension). `example1` and `example2`
    /// select the bundled benchmark configs.
    config: PathBuf,
    /// Artifact directory; overrides `output.dir`.
    #[arg(short, long, env = "PDP_OUTPUT_DIR")]
    output: Option<PathBuf>,
    /// Worker threads for the Bellman sweeps (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = ["discounted", "finite"])]
    mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of stages for the finite-horizon mode.
    #[arg(long = "horizon", visible_alias = "T")]
    horizon: Option<usize>,
    #[arg(long)]
    cost_discount: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    n_particles: Option<usize>,
    /// Number of sampled controls (box control spaces only).
    #[arg(long)]
    n_controls: Option<usize>,
    #[arg(long)]
    seed_particles: Option<u64>,
    #[arg(long)]
    seed_controls: Option<u64>,
    #[arg(long)]
    seed_noise: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_parser = ["reference_cost", "zero"])]
    init: Option<String>,
    #[arg(long)]
    cache_mb: Option<usize>,
}

impl SolveArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let s = &mut cfg.solver;
        if let Some(m) = &self.mode {
            s.mode = if m == "finite" { SolveMode::Finite } else { SolveMode::Discounted };
        }
        if let Some(v) = self.alpha {
            s.alpha = v;
        }
        if let Some(v) = self.horizon {
            s.horizon = Some(v);
        }
        if let Some(v) = self.cost_discount {
            s.cost_discount = v;
        }
        if let Some(v) = self.tol {
            s.tol = v;
        }
        if let Some(v) = self.max_iters {
            s.max_iters = v;
        }
        if let Some(v) = self.n_particles {
            s.n_particles = v;
        }
        if let Some(v) = self.seed_particles {
            s.seeds.particles = v;
        }
        if let Some(v) = self.seed_controls {
            s.seeds.controls = v;
        }
        if let Some(v) = self.seed_noise {
            s.seeds.noise = v;
        }
        if let Some(v) = self.cache_mb {
            s.cache_mb = v;
        }
        if let Some(i) = &self.init {
            s.init = if i == "zero" { InitConfig::Zero } else { InitConfig::ReferenceCost };
        }
        if let Some(n) = self.n_controls {
            match &mut cfg.problem.controls {
                ControlsConfig::Box { n_controls, .. } => *n_controls = n,
                ControlsConfig::Finite { .. } => {
                    return Err(Error::Config("--n-controls needs a box control space".into()))
                }
            }
        }
        if let Some(e) = self.epsilon {
            match &mut cfg.constraints {
                Some(c) => c.epsilon = e,
                None => return Err(Error::Config("--epsilon needs a [constraints] table".into())),
            }
        }
        if let Some(dir) = &self.output {
            cfg.output.dir = dir.to_string_lossy().into_owned();
        }
        cfg.validate()
    }
}

pub fn run(args: SolveArgs) -> i32 {
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    if let Err(e) = args.apply(&mut cfg) {
        return report_error(&e);
    }
    let dir = PathBuf::from(&cfg.output.dir);
    let out = match run_solve(&cfg, args.threads) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e}");
            if let Err(w) = Report::failed(&cfg, &e).write(&dir) {
                eprintln!("error: could not write report: {w}");
            }
            return exit_code(&e);
        }
    };
    let started = Instant::now();
    let written = match write_artifacts(&dir, &out) {
        Ok(w) => w,
        Err(e) => return report_error(&e),
    };
    let mut report = Report::from_run(&out);
    report.timings.export_ms = started.elapsed().as_secs_f64() * 1e3;
    if let Err(e) = report.write(&dir) {
        return report_error(&e);
    }

    println!("status: {}", report.status);
    if !out.reports.is_empty() {
        let last = &out.reports[out.reports.len() - 1];
        println!(
            "iterations: {} (last relative change {:.3e})",
            out.reports.len(),
            last.max_abs_relative_change
        );
    }
    if let Some(c) = &out.solution.constraints {
        println!(
            "infeasible particles: {} ({} initially unsafe)",
            c.infeasible_indices().len(),
            c.initial_indices().len()
        );
    }
    if let Some(fit) = &report.fit {
        if fit.a1.len() == 1 {
            println!("fit: V(x) = {:.4} x^2 {:+.4} x {:+.4} (rms {:.3e})", fit.a2[0], fit.a1[0], fit.a0, fit.rms);
        } else {
            println!("fit: a2 = {:?}, a1 = {:?}, a0 = {:.4} (rms {:.3e})", fit.a2, fit.a1, fit.a0, fit.rms);
        }
    }
    println!("wrote {} files to {}", written.len() + 1, dir.display());
    if out.converged {
        EXIT_OK
    } else {
        eprintln!("error: value iteration did not converge within max_iters");
        EXIT_SOLVER
    }
}
