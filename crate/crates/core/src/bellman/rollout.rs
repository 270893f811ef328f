use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Horizon, PolicySolution};
use crate::error::{Error, Result};
use crate::model::StateVector;

#[derive(Clone, Copy, Debug, Default)]
pub struct RolloutOptions {
    /// Sample process noise; otherwise the nominal dynamics are followed.
    pub noise: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RolloutStep {
    pub k: usize,
    pub state: Vec<f64>,
    /// `None` on the final row and wherever the rollout stopped.
    pub control: Option<Vec<f64>>,
    pub stage_cost: Option<f64>,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Termination {
    Completed,
    LeftStateSpace { step: usize },
    Infeasible { step: usize, reason: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub termination: Termination,
}

impl Rollout {
    pub fn total_cost(&self) -> f64 {
        self.steps.iter().filter_map(|s| s.stage_cost).sum()
    }
}

/// Closed-loop simulation of the extracted policy from `x0`.
pub fn simulate_rollout(
    sol: &PolicySolution,
    x0: &StateVector,
    steps: usize,
    seed: u64,
    options: RolloutOptions,
) -> Result<Rollout> {
    if let Horizon::Finite { steps: t, .. } = sol.problem.horizon {
        if steps > t {
            return Err(Error::Config(format!(
                "rollout of {steps} steps exceeds the horizon of {t}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.as_slice().to_vec();
    let mut noise = vec![0.0; x.len()];
    let mut next = vec![0.0; x.len()];
    let mut out = Vec::with_capacity(steps + 1);
    let finite = sol.is_finite_horizon();
    for k in 0..steps {
        let stage = if finite { k } else { 0 };
        let state = StateVector::new(x.clone())?;
        let eval = match sol.evaluate_at_stage(stage, &state) {
            Ok(e) => e,
            Err(Error::OutsideStateSpace { .. }) => {
                out.push(RolloutStep { k, state: x, control: None, stage_cost: None, feasible: false });
                return Ok(Rollout { steps: out, termination: Termination::LeftStateSpace { step: k } });
            }
            Err(e @ (Error::InfeasibleState { .. } | Error::NoSupportOverlap { .. })) => {
                out.push(RolloutStep { k, state: x, control: None, stage_cost: None, feasible: false });
                return Ok(Rollout {
                    steps: out,
                    termination: Termination::Infeasible { step: k, reason: e.to_string() },
                });
            }
            Err(e) => return Err(e),
        };
        let u = eval.control.as_slice();
        let cost = sol.problem.cost.running(&x, u)?;
        sol.problem.dynamics.apply(&x, u, &mut next);
        if options.noise {
            sol.problem.noise.sample(&mut rng, &mut noise)?;
            for (n, w) in next.iter_mut().zip(&noise) {
                *n += w;
            }
        }
        out.push(RolloutStep { k, state: x.clone(), control: Some(u.to_vec()), stage_cost: Some(cost), feasible: true });
        x.copy_from_slice(&next);
    }
    let inside = sol.problem.state_space.contains(&x);
    let safe = sol.constraints.as_ref().is_none_or(|c| c.safe_set.is_safe(&x));
    out.push(RolloutStep { k: steps, state: x, control: None, stage_cost: None, feasible: inside && safe });
    let termination = if inside { Termination::Completed } else { Termination::LeftStateSpace { step: steps } };
    Ok(Rollout { steps: out, termination })
}
