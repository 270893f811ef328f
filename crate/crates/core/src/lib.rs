//! Meshless stochastic dynamic programming.
//!
//! The state space is covered by an i.i.d. particle cloud instead of a grid.
//! Expectations of the value function over the process noise are estimated by
//! self-normalized importance sampling against that cloud, which makes the
//! value approximation evaluable at any state directly from the particle
//! weights. Finite-horizon backward recursion, discounted value iteration and
//! stage-wise chance constraints are built on that single interpolation rule.

pub mod bellman;
pub mod cli;
pub mod config;
pub mod constraints;
pub mod error;
pub mod geometry;
pub mod model;
pub mod oracle;
pub mod io;
pub mod quadrature;
pub mod run;
pub mod sampling;
pub mod verify;

pub use bellman::{
    bellman_backup_at, eval_policy, eval_value, initial_weights, simulate_rollout, solve_finite_horizon,
    terminal_weights, value_iteration, BellmanOperator, BellmanUpdateReport, Evaluation, Horizon,
    PolicySolution, ProblemSpec, Rollout, RolloutOptions, RolloutStep, SolverOptions,
    SupportFallback, Termination, ValueIterationOutcome, WeightInit, WeightVector,
};
pub use constraints::{
    admissible_controls, initialize_infeasible_set, safety_probability, ConstraintSpec,
    InfeasibleMode, SafeSet,
};
pub use error::{Error, Result};
pub use geometry::BoxRegion;
pub use model::{
    ControlDensity, ControlSpace, ControlVector, DynamicsModel, Gaussian, NoiseDensity,
    RunningCost, SamplingDensity, StageCost, StateSpace, StateVector, TerminalCost,
};
pub use sampling::{
    draw_particles, estimate_expectation, likelihood_row, sample_control_grid, ControlGrid,
    GridProvenance, LikelihoodRow, ParticleCloud,
};

/// Crate version string stamped into every exported artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
