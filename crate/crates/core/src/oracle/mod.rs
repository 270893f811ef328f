//! Independent reference computations used to check the solver.
//!
//! Nothing here shares numerical code with `bellman` or `sampling`.

mod expectation;
mod fit;
mod riccati;
mod tiny_dp;

pub use expectation::{brute_force_expectation, ExpectationEstimate, QuadratureSpec};
pub use fit::{fit_quadratic, QuadraticFit};
pub use riccati::{discounted_offset, riccati_residual, solve_discounted_riccati, LqrSolution};
pub use tiny_dp::{exact_small_dp, TINY_MAX_CONTROLS, TINY_MAX_PARTICLES, TINY_MAX_STAGES};
