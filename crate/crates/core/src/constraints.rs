//! Stage-wise chance constraints `Pr(x_{k+1} ∈ S | x_k, u_k) ≥ 1 - ε`.
//!
//! The same importance likelihoods that interpolate the value function give
//! the safety estimate `1 - Σ_{j∈I} c_j(x, u)`, where `I` indexes the
//! particles that are unsafe or have no admissible control. `I` only grows
//! during a solve and is updated between sweeps, never inside one.

use std::collections::BTreeSet;

use crate::bellman::ProblemSpec;
use crate::error::{ensure_dim, Error, Result};
use crate::geometry::BoxRegion;
use crate::model::{StateSpace, StateVector};
use crate::sampling::{likelihood_row, ControlGrid, LikelihoodRow, ParticleCloud};

/// The safe set, declared either directly or through its complement.
#[derive(Clone, Debug, PartialEq)]
pub enum SafeSet {
    /// Union of boxes that are safe.
    Safe(Vec<BoxRegion>),
    /// Union of boxes that are unsafe; everything else in the state set is safe.
    Unsafe(Vec<BoxRegion>),
}

impl SafeSet {
    pub fn is_safe(&self, x: &[f64]) -> bool {
        match self {
            Self::Safe(boxes) => boxes.iter().any(|b| b.contains(x)),
            Self::Unsafe(boxes) => !boxes.iter().any(|b| b.contains(x)),
        }
    }

    pub fn boxes(&self) -> &[BoxRegion] {
        match self {
            Self::Safe(b) | Self::Unsafe(b) => b,
        }
    }

    /// Checks dimensions and that every box meets the state set.
    pub fn validate(&self, space: &StateSpace) -> Result<()> {
        let boxes = self.boxes();
        if boxes.is_empty() {
            return Err(Error::Config("safe set needs at least one box".into()));
        }
        for b in boxes {
            ensure_dim("constraint box", space.dim(), b.dim())?;
            if b.intersect(&space.bounds).is_none() {
                return Err(Error::Config(format!(
                    "constraint box {:?} does not intersect the state set",
                    b.pairs()
                )));
            }
        }
        Ok(())
    }

    /// Boxes clipped to the state set. Membership of points inside the state
    /// set is unchanged.
    pub fn clipped(&self, space: &StateSpace) -> Self {
        let clip = |boxes: &[BoxRegion]| -> Vec<BoxRegion> {
            boxes.iter().filter_map(|b| b.intersect(&space.bounds)).collect()
        };
        match self {
            Self::Safe(b) => Self::Safe(clip(b)),
            Self::Unsafe(b) => Self::Unsafe(clip(b)),
        }
    }
}

/// Value held by particles in the infeasible set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InfeasibleMode {
    /// Infeasible particles keep a fixed penalty weight that still enters
    /// other particles' sums. `value: None` uses `factor` times the largest
    /// feasible initial weight.
    Penalty { factor: f64, value: Option<f64> },
    /// Likelihood rows are renormalized over feasible particles only.
    Renormalize,
}

impl Default for InfeasibleMode {
    fn default() -> Self {
        Self::Penalty {
            factor: 10.0,
            value: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSpec {
    pub safe_set: SafeSet,
    pub epsilon: f64,
    pub mode: InfeasibleMode,
    infeasible: BTreeSet<usize>,
    initial: BTreeSet<usize>,
}

impl ConstraintSpec {
    pub fn new(safe_set: SafeSet, epsilon: f64, mode: InfeasibleMode) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        if let InfeasibleMode::Penalty { factor, value } = mode {
            if !(factor.is_finite() && factor > 0.0) || value.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
                return Err(Error::Config("penalty must be finite and nonnegative".into()));
            }
        }
        Ok(Self {
            safe_set,
            epsilon,
            mode,
            infeasible: BTreeSet::new(),
            initial: BTreeSet::new(),
        })
    }

    /// Seeds the infeasible set with the unsafe particles of `cloud` (on top
    /// of any indices already present).
    pub fn initialized(mut self, cloud: &ParticleCloud) -> Self {
        self.initial = initialize_infeasible_set(cloud, &self.safe_set);
        self.infeasible.extend(self.initial.iter().copied());
        self
    }

    /// Restores a previously computed state, e.g. from an archive.
    pub fn with_indices(mut self, initial: BTreeSet<usize>, infeasible: BTreeSet<usize>) -> Self {
        self.initial = initial;
        self.infeasible = infeasible;
        self
    }

    pub fn infeasible_indices(&self) -> &BTreeSet<usize> {
        &self.infeasible
    }

    /// Indices of particles that were unsafe before any sweep.
    pub fn initial_indices(&self) -> &BTreeSet<usize> {
        &self.initial
    }

    pub fn is_infeasible(&self, j: usize) -> bool {
        self.infeasible.contains(&j)
    }

    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &j in self.infeasible.range(..n) {
            mask[j] = true;
        }
        mask
    }
}

/// Indices of the particles lying outside the safe set.
pub fn initialize_infeasible_set(cloud: &ParticleCloud, safe: &SafeSet) -> BTreeSet<usize> {
    cloud
        .iter()
        .enumerate()
        .filter(|(_, p)| !safe.is_safe(p))
        .map(|(j, _)| j)
        .collect()
}

/// Importance-sampling estimate `1 - Σ_{j∈I} c_j` of the probability that the
/// next state is safe, clamped to `[0, 1]`.
pub fn safety_probability(cloud: &ParticleCloud, spec: &ConstraintSpec, row: &LikelihoodRow) -> Result<f64> {
    ensure_dim("likelihood row", cloud.len(), row.len())?;
    let n = cloud.len();
    let bad = spec.infeasible.range(..n).count();
    if bad == 0 {
        return Ok(1.0);
    }
    if bad == n {
        return Ok(0.0);
    }
    let unsafe_mass: f64 = spec.infeasible.range(..n).map(|&j| row.values[j]).sum();
    Ok((1.0 - unsafe_mass).clamp(0.0, 1.0))
}

/// Filters `grid` down to the controls whose estimated safety at `x` is at
/// least `1 - ε`. With bounded noise, controls that could push the state out
/// of the state set are dropped too. Controls whose likelihood row has no
/// support cannot be certified and are dropped.
pub fn admissible_controls(
    x: &StateVector,
    grid: &ControlGrid,
    cloud: &ParticleCloud,
    spec: &ConstraintSpec,
    problem: &ProblemSpec,
) -> Result<ControlGrid> {
    if grid.is_empty() {
        return Err(Error::Config("control grid is empty".into()));
    }
    ensure_dim("state", problem.state_dim(), x.dim())?;
    let mut mean = vec![0.0; x.dim()];
    let mut keep = Vec::new();
    for (q, u) in grid.iter().enumerate() {
        problem.dynamics.apply(x.as_slice(), u, &mut mean);
        if let Some(support) = problem.noise.support() {
            if !support.shifted_inside(&mean, &problem.state_space.bounds) {
                continue;
            }
        }
        let row = match likelihood_row(cloud, &problem.noise, &StateVector::new(mean.clone())?) {
            Ok(row) => row,
            Err(Error::NoSupportOverlap { .. }) => continue,
            Err(e) => return Err(e),
        };
        if safety_probability(cloud, spec, &row)? >= 1.0 - spec.epsilon {
            keep.push(q);
        }
    }
    Ok(grid.subset(&keep))
}

/// Merges the particles that ran out of admissible controls into the
/// infeasible set. Returns how many were new.
pub fn apply_constraint_adaptation(spec: &mut ConstraintSpec, newly_infeasible: &[usize], n: usize) -> Result<usize> {
    let before = spec.infeasible.len();
    spec.infeasible.extend(newly_infeasible.iter().copied().filter(|&j| j < n));
    if spec.infeasible.range(..n).count() == n {
        return Err(Error::AllInfeasible);
    }
    Ok(spec.infeasible.len() - before)
}
