//! End-to-end solve driven by a [`RunConfig`].

use std::time::{Duration, Instant};

use crate::bellman::{
    initial_weights, solve_finite_horizon, value_iteration, BellmanUpdateReport, Horizon, PolicySolution,
};
use crate::config::RunConfig;
use crate::error::Result;
use crate::model::StateVector;
use crate::oracle::{fit_quadratic, QuadraticFit};
use crate::sampling::{draw_particles, sample_control_grid};

#[derive(Clone, Debug, Default)]
pub struct Timings {
    pub sampling: Duration,
    pub solve: Duration,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: RunConfig,
    pub solution: PolicySolution,
    pub reports: Vec<BellmanUpdateReport>,
    /// Always true for finite-horizon solves.
    pub converged: bool,
    pub timings: Timings,
}

impl RunOutput {
    /// Quadratic fit of the stage-0 (or converged) weights over the feasible
    /// particles, when the state dimension is small enough.
    pub fn value_fit(&self) -> Option<QuadraticFit> {
        let cloud = &self.solution.cloud;
        if cloud.dim() > 3 {
            return None;
        }
        let weights = &self.solution.final_weights().values;
        let mut states = Vec::new();
        let mut values = Vec::new();
        for l in 0..cloud.len() {
            if self.solution.constraints.as_ref().is_some_and(|c| c.is_infeasible(l)) {
                continue;
            }
            states.push(StateVector::new(cloud.particle(l).to_vec()).ok()?);
            values.push(weights[l]);
        }
        fit_quadratic(&states, &values).ok()
    }
}

/// Samples the particle cloud and control grid from the configured seeds
/// and runs the configured solver.
pub fn run(config: &RunConfig, threads: Option<usize>) -> Result<RunOutput> {
    let mut setup = config.setup()?;
    setup.options.threads = threads;
    let seeds = config.solver.seeds;

    let started = Instant::now();
    let cloud = draw_particles(&setup.problem.sampling, &setup.problem.state_space, config.solver.n_particles, seeds.particles)?;
    let grid = sample_control_grid(&setup.problem.control_space, seeds.controls)?;
    let sampling = started.elapsed();

    let started = Instant::now();
    let (solution, reports, converged) = match setup.problem.horizon {
        Horizon::Finite { .. } => {
            let sol = solve_finite_horizon(&setup.problem, &cloud, &grid, setup.constraints.as_ref(), &setup.options)?;
            (sol, Vec::new(), true)
        }
        Horizon::Discounted { .. } => {
            let init = initial_weights(&setup.problem, &cloud, &grid, setup.init)?;
            let out = value_iteration(&setup.problem, &cloud, &grid, &init, setup.constraints.as_ref(), &setup.options)?;
            (out.solution, out.reports, out.converged)
        }
    };
    Ok(RunOutput {
        config: config.clone(),
        solution,
        reports,
        converged,
        timings: Timings {
            sampling,
            solve: started.elapsed(),
        },
    })
}
