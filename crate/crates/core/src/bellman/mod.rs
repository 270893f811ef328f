//! Particle dynamic programming.
//!
//! Weights `Ω_l` attached to the particles represent the cost-to-go. One
//! backup at a state `x` is
//!
//! ```text
//! V(x) = min_u { l(x, u) + d · Σ_j Ω_j c_j(x, u) }
//! ```
//!
//! with `d = 1` for the finite-horizon recursion (discounting, if any, is
//! folded into the stage costs) and `d = α` for discounted value iteration.
//! Because the weights `c_j` are convex, the discounted update is an
//! `α`-contraction in the sup norm.

mod engine;
mod rollout;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::constraints::{apply_constraint_adaptation, ConstraintSpec, InfeasibleMode};
use crate::error::{ensure_dim, Error, Result};
use crate::model::{ControlSpace, ControlVector, DynamicsModel, NoiseDensity, SamplingDensity, StageCost, StateSpace, StateVector};
use crate::sampling::{ControlGrid, ParticleCloud};

pub(crate) use engine::ConstraintView;
use engine::{Backup, Engine, Kernel};
pub use rollout::{simulate_rollout, Rollout, RolloutOptions, RolloutStep, Termination};

/// Weights below this magnitude are compared absolutely in the relative
/// convergence test.
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    /// Backward recursion over `steps` stages. Stage `k` pays
    /// `cost_discount^k · l`; the terminal cost is scaled by `cost_discount^steps`.
    Finite { steps: usize, cost_discount: f64 },
    /// Value iteration with discount `alpha`, stopped once the largest
    /// relative weight change is at most `tol`.
    Discounted { alpha: f64, tol: f64, max_iters: usize },
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub dynamics: DynamicsModel,
    pub cost: StageCost,
    pub noise: NoiseDensity,
    pub sampling: SamplingDensity,
    pub state_space: StateSpace,
    pub control_space: ControlSpace,
    pub horizon: Horizon,
}

impl ProblemSpec {
    pub fn state_dim(&self) -> usize {
        self.state_space.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.state_dim();
        ensure_dim("dynamics state", r, self.dynamics.state_dim())?;
        ensure_dim("noise density", r, self.noise.dim())?;
        ensure_dim("sampling density", r, self.sampling.dim())?;
        self.cost.check_dims(r, self.control_dim())?;
        self.control_space.validate()?;
        if let Some(d) = self.control_space.dim() {
            ensure_dim("control space", self.control_dim(), d)?;
        }
        match self.horizon {
            Horizon::Finite { steps, cost_discount } => {
                if steps == 0 {
                    return Err(Error::Config("finite horizon needs at least one stage".into()));
                }
                if !(cost_discount.is_finite() && cost_discount > 0.0) {
                    return Err(Error::Config("cost discount must be positive".into()));
                }
            }
            Horizon::Discounted { alpha, tol, max_iters } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
                }
                if !(tol.is_finite() && tol > 0.0) {
                    return Err(Error::Config("tolerance must be positive".into()));
                }
                if max_iters == 0 {
                    return Err(Error::Config("max_iters must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Discount applied to the continuation term of a backup.
    pub fn continuation_discount(&self) -> f64 {
        match self.horizon {
            Horizon::Finite { .. } => 1.0,
            Horizon::Discounted { alpha, .. } => alpha,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    /// Stage index (finite horizon) or iteration count (discounted).
    pub label: usize,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, label: usize) -> Self {
        Self { values, label }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// What to do when no particle lies in the noise support around a predicted state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SupportFallback {
    /// Treat the control as unusable; raise if no control is usable.
    #[default]
    Error,
    /// Put all the mass on the nearest particle.
    NearestParticle,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightInit {
    /// `Ω_l = l(ξ_l, u_0)` with `u_0` the first control of the grid.
    #[default]
    ReferenceCost,
    Zero,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Worker threads; `None` uses rayon's global pool.
    pub threads: Option<usize>,
    /// Memory budget for cached likelihood rows. Caching never changes results.
    pub cache_bytes: usize,
    pub support: SupportFallback,
    pub relative_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            threads: None,
            cache_bytes: 1 << 30,
            support: SupportFallback::Error,
            relative_floor: DEFAULT_RELATIVE_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BellmanUpdateReport {
    pub iteration: usize,
    pub max_abs_relative_change: f64,
    pub sup_abs_change: f64,
    pub wall_time: Duration,
    pub infeasible_count: usize,
}

/// A solved problem: everything needed to evaluate the value function and
/// the feedback law at any state.
#[derive(Clone, Debug)]
pub struct PolicySolution {
    pub problem: ProblemSpec,
    pub cloud: ParticleCloud,
    pub grid: ControlGrid,
    /// Finite horizon: stages `0..=T`. Discounted: the final iterate only.
    pub weights: Vec<WeightVector>,
    /// Argmin control index per particle from the last backup of each
    /// decision stage; `None` for infeasible particles.
    pub policy: Vec<Vec<Option<usize>>>,
    pub constraints: Option<ConstraintSpec>,
    /// Weight held by infeasible particles.
    pub penalty: f64,
    pub support: SupportFallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub control: ControlVector,
    pub control_index: usize,
}

impl PolicySolution {
    pub fn is_finite_horizon(&self) -> bool {
        matches!(self.problem.horizon, Horizon::Finite { .. })
    }

    /// Number of decision stages (1 for discounted solutions).
    pub fn decision_stages(&self) -> usize {
        match self.problem.horizon {
            Horizon::Finite { steps, .. } => steps,
            Horizon::Discounted { .. } => 1,
        }
    }

    pub fn final_weights(&self) -> &WeightVector {
        match self.problem.horizon {
            Horizon::Finite { .. } => &self.weights[0],
            Horizon::Discounted { .. } => &self.weights[self.weights.len() - 1],
        }
    }

    /// Self-approximating evaluation at `x`: the backup is rerun at `x`
    /// against the stored weights. Stage 0 for finite-horizon solutions.
    pub fn evaluate(&self, x: &StateVector) -> Result<Evaluation> {
        self.evaluate_at_stage(0, x)
    }

    pub fn evaluate_at_stage(&self, stage: usize, x: &StateVector) -> Result<Evaluation> {
        ensure_dim("state", self.problem.state_dim(), x.dim())?;
        if !self.problem.state_space.contains(x.as_slice()) {
            return Err(Error::OutsideStateSpace {
                state: x.as_slice().to_vec(),
            });
        }
        let (next, factor) = match self.problem.horizon {
            Horizon::Finite { steps, cost_discount } => {
                if stage >= steps {
                    return Err(Error::Config(format!(
                        "stage {stage} has no decision (horizon {steps})"
                    )));
                }
                (&self.weights[stage + 1], cost_discount.powi(stage as i32))
            }
            Horizon::Discounted { .. } => (self.final_weights(), 1.0),
        };
        let mask = self.constraints.as_ref().map(|c| c.mask(self.cloud.len()));
        if let Some(c) = &self.constraints {
            if !c.safe_set.is_safe(x.as_slice()) {
                return Err(Error::InfeasibleState {
                    state: x.as_slice().to_vec(),
                });
            }
        }
        let view = self.constraints.as_ref().zip(mask.as_deref()).map(|(c, m)| ConstraintView {
            mask: m,
            threshold: 1.0 - c.epsilon,
            renormalize: c.mode == InfeasibleMode::Renormalize,
        });
        let kernel = Kernel {
            problem: &self.problem,
            cloud: &self.cloud,
            grid: &self.grid,
            support: self.support,
        };
        match kernel.backup_state(
            x.as_slice(),
            &next.values,
            factor,
            self.problem.continuation_discount(),
            view.as_ref(),
        )? {
            Backup::Chosen(c) => Ok(Evaluation {
                value: c.value,
                control: self.grid.control_vector(c.control),
                control_index: c.control,
            }),
            Backup::NoAdmissible { all_unsupported: true } if view.is_none() => {
                let mut mean = vec![0.0; x.dim()];
                self.problem.dynamics.apply(x.as_slice(), self.grid.control(0), &mut mean);
                let nearest_distance = self.cloud.nearest(&mean).1;
                Err(Error::NoSupportOverlap {
                    predicted_mean: mean,
                    nearest_distance,
                })
            }
            _ => Err(Error::InfeasibleState {
                state: x.as_slice().to_vec(),
            }),
        }
    }
}

pub fn eval_value(sol: &PolicySolution, x: &StateVector) -> Result<f64> {
    sol.evaluate(x).map(|e| e.value)
}

pub fn eval_policy(sol: &PolicySolution, x: &StateVector) -> Result<ControlVector> {
    sol.evaluate(x).map(|e| e.control)
}

/// `Ω_l = l_T(ξ_l)`.
pub fn terminal_weights(cloud: &ParticleCloud, cost: &StageCost) -> Result<WeightVector> {
    if cloud.is_empty() {
        return Err(Error::Config("particle cloud is empty".into()));
    }
    let values = cloud.iter().map(|p| cost.terminal(p)).collect::<Result<Vec<_>>>()?;
    Ok(WeightVector::new(values, 0))
}

/// Initial weights for value iteration.
pub fn initial_weights(spec: &ProblemSpec, cloud: &ParticleCloud, grid: &ControlGrid, init: WeightInit) -> Result<WeightVector> {
    let values = match init {
        WeightInit::Zero => vec![0.0; cloud.len()],
        WeightInit::ReferenceCost => {
            if grid.is_empty() {
                return Err(Error::Config("control grid is empty".into()));
            }
            cloud
                .iter()
                .map(|p| spec.cost.running(p, grid.control(0)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(WeightVector::new(values, 0))
}

/// One backup at `x` over the given admissible controls, without constraints.
/// Ties go to the lowest control index.
pub fn bellman_backup_at(
    x: &StateVector,
    admissible: &ControlGrid,
    next_weights: &WeightVector,
    cloud: &ParticleCloud,
    spec: &ProblemSpec,
    discount: f64,
) -> Result<(f64, ControlVector)> {
    ensure_dim("state", spec.state_dim(), x.dim())?;
    ensure_dim("weight vector", cloud.len(), next_weights.len())?;
    if admissible.is_empty() {
        return Err(Error::InfeasibleState {
            state: x.as_slice().to_vec(),
        });
    }
    ensure_dim("control", spec.control_dim(), admissible.dim())?;
    let kernel = Kernel {
        problem: spec,
        cloud,
        grid: admissible,
        support: SupportFallback::Error,
    };
    match kernel.backup_state(x.as_slice(), &next_weights.values, 1.0, discount, None)? {
        Backup::Chosen(c) => Ok((c.value, admissible.control_vector(c.control))),
        Backup::NoAdmissible { all_unsupported: true } => {
            let mut mean = vec![0.0; x.dim()];
            spec.dynamics.apply(x.as_slice(), admissible.control(0), &mut mean);
            let nearest_distance = cloud.nearest(&mean).1;
            Err(Error::NoSupportOverlap {
                predicted_mean: mean,
                nearest_distance,
            })
        }
        _ => Err(Error::InfeasibleState {
            state: x.as_slice().to_vec(),
        }),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn warn_unbounded_noise(spec: &ProblemSpec) {
    if !spec.noise.is_bounded() {
        log::warn!(
            "noise has unbounded support: the probability-one forward-invariance screen is skipped \
             and every control in the grid is considered"
        );
    }
}

/// Constraint state carried through a solve.
struct ActiveConstraints {
    spec: ConstraintSpec,
    mask: Vec<bool>,
}

impl ActiveConstraints {
    fn start(spec: Option<&ConstraintSpec>, cloud: &ParticleCloud) -> Result<Option<Self>> {
        let Some(spec) = spec else { return Ok(None) };
        let spec = spec.clone().initialized(cloud);
        let mask = spec.mask(cloud.len());
        if mask.iter().all(|&b| b) {
            return Err(Error::AllInfeasible);
        }
        Ok(Some(Self { spec, mask }))
    }

    fn view(&self) -> ConstraintView<'_> {
        ConstraintView {
            mask: &self.mask,
            threshold: 1.0 - self.spec.epsilon,
            renormalize: self.spec.mode == InfeasibleMode::Renormalize,
        }
    }

    /// Penalty weight for infeasible particles.
    fn penalty(&self, initial: &[f64], reference_cost: impl Fn(usize) -> f64) -> f64 {
        let factor = match self.spec.mode {
            InfeasibleMode::Penalty { value: Some(v), .. } => return v,
            InfeasibleMode::Penalty { factor, value: None } => factor,
            InfeasibleMode::Renormalize => 10.0,
        };
        let feasible = || (0..initial.len()).filter(|&l| !self.mask[l]);
        let mut base = feasible().map(|l| initial[l]).fold(0.0, f64::max);
        if base <= 0.0 {
            base = feasible().map(&reference_cost).fold(0.0, f64::max);
        }
        if base <= 0.0 {
            base = 1.0;
        }
        factor * base
    }

    fn absorb(&mut self, newly: &[usize]) -> Result<()> {
        apply_constraint_adaptation(&mut self.spec, newly, self.mask.len())?;
        for &l in newly {
            self.mask[l] = true;
        }
        Ok(())
    }
}

/// Weights, argmin control indices and newly infeasible particles of one sweep.
type SweepOutcome = (Vec<f64>, Vec<Option<usize>>, Vec<usize>);

fn collect_sweep(
    engine: &Engine<'_>,
    backups: Vec<Backup>,
    constrained: bool,
    frozen: f64,
) -> Result<SweepOutcome> {
    let mut values = Vec::with_capacity(backups.len());
    let mut controls = Vec::with_capacity(backups.len());
    let mut newly = Vec::new();
    for (l, b) in backups.into_iter().enumerate() {
        match b {
            Backup::Chosen(c) => {
                values.push(c.value);
                controls.push(Some(c.control));
            }
            Backup::Skipped => {
                values.push(frozen);
                controls.push(None);
            }
            Backup::NoAdmissible { all_unsupported } => {
                if !constrained {
                    return Err(engine.infeasibility_error(l, all_unsupported));
                }
                newly.push(l);
                values.push(frozen);
                controls.push(None);
            }
        }
    }
    Ok((values, controls, newly))
}

/// Backward recursion from the terminal weights down to stage 0.
pub fn solve_finite_horizon(
    spec: &ProblemSpec,
    cloud: &ParticleCloud,
    grid: &ControlGrid,
    constraints: Option<&ConstraintSpec>,
    options: &SolverOptions,
) -> Result<PolicySolution> {
    spec.validate()?;
    let Horizon::Finite { steps, cost_discount } = spec.horizon else {
        return Err(Error::Config("solve_finite_horizon needs a finite horizon".into()));
    };
    ensure_dim("control grid", spec.control_dim(), grid.dim())?;
    warn_unbounded_noise(spec);
    with_threads(options.threads, || {
        let engine = Engine::new(spec, cloud, grid, options.support, options.cache_bytes)?;
        let mut active = ActiveConstraints::start(constraints, cloud)?;

        let terminal_scale = cost_discount.powi(steps as i32);
        let mut terminal = terminal_weights(cloud, &spec.cost)?.values;
        for v in &mut terminal {
            *v *= terminal_scale;
        }
        let penalty = active
            .as_ref()
            .map_or(0.0, |a| a.penalty(&terminal, |l| engine.reference_cost(l)));
        if let Some(a) = &active {
            for (v, &bad) in terminal.iter_mut().zip(&a.mask) {
                if bad {
                    *v = penalty;
                }
            }
        }

        let mut stages = vec![WeightVector::new(terminal, steps)];
        let mut policy = Vec::with_capacity(steps);
        for k in (0..steps).rev() {
            let next = &stages[stages.len() - 1].values;
            let view = active.as_ref().map(ActiveConstraints::view);
            let backups = engine.sweep(next, cost_discount.powi(k as i32), 1.0, view.as_ref());
            let (values, controls, newly) = collect_sweep(&engine, backups, active.is_some(), penalty)?;
            if let Some(a) = &mut active {
                a.absorb(&newly)?;
            }
            stages.push(WeightVector::new(values, k));
            policy.push(controls);
        }
        stages.reverse();
        policy.reverse();
        Ok(PolicySolution {
            problem: spec.clone(),
            cloud: cloud.clone(),
            grid: grid.clone(),
            weights: stages,
            policy,
            constraints: active.map(|a| a.spec),
            penalty,
            support: options.support,
        })
    })
}

#[derive(Clone, Debug)]
pub struct ValueIterationOutcome {
    pub solution: PolicySolution,
    pub reports: Vec<BellmanUpdateReport>,
    /// `false` when `max_iters` ran out; the solution then holds the last iterate.
    pub converged: bool,
}

/// Discounted value iteration from `init`.
pub fn value_iteration(
    spec: &ProblemSpec,
    cloud: &ParticleCloud,
    grid: &ControlGrid,
    init: &WeightVector,
    constraints: Option<&ConstraintSpec>,
    options: &SolverOptions,
) -> Result<ValueIterationOutcome> {
    spec.validate()?;
    let Horizon::Discounted { alpha, tol, max_iters } = spec.horizon else {
        return Err(Error::Config("value_iteration needs a discounted horizon".into()));
    };
    ensure_dim("initial weights", cloud.len(), init.len())?;
    ensure_dim("control grid", spec.control_dim(), grid.dim())?;
    if init.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("initial weights must be finite".into()));
    }
    warn_unbounded_noise(spec);
    with_threads(options.threads, || {
        let engine = Engine::new(spec, cloud, grid, options.support, options.cache_bytes)?;
        let mut active = ActiveConstraints::start(constraints, cloud)?;
        let penalty = active
            .as_ref()
            .map_or(0.0, |a| a.penalty(&init.values, |l| engine.reference_cost(l)));
        let mut weights = init.values.clone();
        if let Some(a) = &active {
            for (v, &bad) in weights.iter_mut().zip(&a.mask) {
                if bad {
                    *v = penalty;
                }
            }
        }

        let mut reports = Vec::new();
        let mut converged = false;
        let mut controls = vec![None; cloud.len()];
        for iteration in 1..=max_iters {
            let started = Instant::now();
            let view = active.as_ref().map(ActiveConstraints::view);
            let backups = engine.sweep(&weights, 1.0, alpha, view.as_ref());
            let (next, argmins, newly) = collect_sweep(&engine, backups, active.is_some(), penalty)?;
            if let Some(a) = &mut active {
                a.absorb(&newly)?;
            }
            let mut rel = 0.0f64;
            let mut sup = 0.0f64;
            for l in 0..next.len() {
                if active.as_ref().is_some_and(|a| a.mask[l]) {
                    continue;
                }
                let d = (next[l] - weights[l]).abs();
                sup = sup.max(d);
                rel = rel.max(d / weights[l].abs().max(options.relative_floor));
            }
            reports.push(BellmanUpdateReport {
                iteration,
                max_abs_relative_change: rel,
                sup_abs_change: sup,
                wall_time: started.elapsed(),
                infeasible_count: active.as_ref().map_or(0, |a| a.spec.infeasible_indices().len()),
            });
            log::debug!("iteration {iteration}: relative change {rel:e}, sup change {sup:e}");
            weights = next;
            controls = argmins;
            if rel <= tol && newly.is_empty() {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("value iteration stopped at max_iters = {max_iters} without converging");
        }
        let iterations = reports.len();
        Ok(ValueIterationOutcome {
            solution: PolicySolution {
                problem: spec.clone(),
                cloud: cloud.clone(),
                grid: grid.clone(),
                weights: vec![WeightVector::new(weights, iterations)],
                policy: vec![controls],
                constraints: active.map(|a| a.spec),
                penalty,
                support: options.support,
            },
            reports,
            converged,
        })
    })
}

/// The discounted Bellman operator on a fixed cloud and grid, exposed for
/// property checks (contraction, monotonicity).
pub struct BellmanOperator<'a> {
    engine: Engine<'a>,
    discount: f64,
}

impl<'a> BellmanOperator<'a> {
    pub fn new(spec: &'a ProblemSpec, cloud: &'a ParticleCloud, grid: &'a ControlGrid, options: &SolverOptions) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            engine: Engine::new(spec, cloud, grid, options.support, options.cache_bytes)?,
            discount: spec.continuation_discount(),
        })
    }

    /// `T(Ω)`. Particles in the constraint set, or left without an admissible
    /// control, keep their input weight.
    pub fn apply(&self, weights: &WeightVector, constraints: Option<&ConstraintSpec>) -> Result<WeightVector> {
        let n = self.engine.kernel.cloud.len();
        ensure_dim("weight vector", n, weights.len())?;
        let mask = constraints.map(|c| c.mask(n));
        let view = constraints.zip(mask.as_deref()).map(|(c, m)| ConstraintView {
            mask: m,
            threshold: 1.0 - c.epsilon,
            renormalize: c.mode == InfeasibleMode::Renormalize,
        });
        let backups = self.engine.sweep(&weights.values, 1.0, self.discount, view.as_ref());
        let mut out = Vec::with_capacity(n);
        for (l, b) in backups.into_iter().enumerate() {
            match b {
                Backup::Chosen(c) => out.push(c.value),
                Backup::Skipped => out.push(weights.values[l]),
                Backup::NoAdmissible { all_unsupported } => {
                    if constraints.is_none() {
                        return Err(self.engine.infeasibility_error(l, all_unsupported));
                    }
                    out.push(weights.values[l]);
                }
            }
        }
        Ok(WeightVector::new(out, weights.label + 1))
    }
}

#[cfg(test)]
mod tests;
