use rayon::prelude::*;

use super::{ProblemSpec, SupportFallback};
use crate::error::{Error, Result};
use crate::sampling::{fill_row, ControlGrid, ParticleCloud};

/// Frozen view of the infeasible set used during one sweep.
pub(crate) struct ConstraintView<'c> {
    pub mask: &'c [bool],
    pub threshold: f64,
    pub renormalize: bool,
}

pub(crate) enum PairValue {
    Continuation(f64),
    Unsupported,
    Inadmissible,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Choice {
    pub value: f64,
    pub control: usize,
}

pub(crate) enum Backup {
    Chosen(Choice),
    Skipped,
    NoAdmissible { all_unsupported: bool },
}

/// Expected continuation `Σ_j Ω_j w_j / Σ_j w_j` for one unnormalized row,
/// or why the pair cannot be used. Sums run in particle order.
#[inline]
pub(crate) fn continuation(row: &[f64], sum: f64, weights: &[f64], view: Option<&ConstraintView<'_>>) -> PairValue {
    if sum == 0.0 {
        return PairValue::Unsupported;
    }
    let Some(view) = view else {
        let mut acc = 0.0;
        for (w, c) in weights.iter().zip(row) {
            acc += w * c;
        }
        return PairValue::Continuation(acc / sum);
    };
    let mut acc = 0.0;
    let mut unsafe_mass = 0.0;
    let mut feasible_mass = 0.0;
    for ((w, c), &bad) in weights.iter().zip(row).zip(view.mask) {
        if bad {
            unsafe_mass += c;
            if !view.renormalize {
                acc += w * c;
            }
        } else {
            feasible_mass += c;
            acc += w * c;
        }
    }
    let safety = (1.0 - unsafe_mass / sum).clamp(0.0, 1.0);
    if safety < view.threshold {
        return PairValue::Inadmissible;
    }
    if view.renormalize {
        if feasible_mass == 0.0 {
            return PairValue::Inadmissible;
        }
        PairValue::Continuation(acc / feasible_mass)
    } else {
        PairValue::Continuation(acc / sum)
    }
}

/// Backup machinery that works at arbitrary states, without precomputation.
pub(crate) struct Kernel<'a> {
    pub problem: &'a ProblemSpec,
    pub cloud: &'a ParticleCloud,
    pub grid: &'a ControlGrid,
    pub support: SupportFallback,
}

impl<'a> Kernel<'a> {
    /// Unnormalized row for `mean`, honoring the support fallback.
    #[inline]
    pub fn pair_row(&self, mean: &[f64], out: &mut [f64]) -> f64 {
        let (sum, _) = fill_row(self.cloud, &self.problem.noise, mean, out);
        if sum == 0.0 && self.support == SupportFallback::NearestParticle {
            let (j, dist) = self.cloud.nearest(mean);
            log::debug!("no support around {mean:?}; falling back to particle {j} at distance {dist}");
            out.fill(0.0);
            out[j] = 1.0;
            return 1.0;
        }
        sum
    }

    #[inline]
    pub fn forward_invariant(&self, mean: &[f64]) -> bool {
        match self.problem.noise.support() {
            Some(s) => s.shifted_inside(mean, &self.problem.state_space.bounds),
            None => true,
        }
    }

    /// Backup at an arbitrary state. Mirrors [`Engine::backup_particle`]
    /// operation for operation so both give identical bits at particles.
    pub fn backup_state(
        &self,
        x: &[f64],
        weights: &[f64],
        stage_factor: f64,
        discount: f64,
        view: Option<&ConstraintView<'_>>,
    ) -> Result<Backup> {
        let mut buf = vec![0.0; self.cloud.len()];
        let mut mean = vec![0.0; x.len()];
        let mut best: Option<Choice> = None;
        let mut candidates = 0;
        let mut unsupported = 0;
        for (q, u) in self.grid.iter().enumerate() {
            self.problem.dynamics.apply(x, u, &mut mean);
            if !self.forward_invariant(&mean) {
                continue;
            }
            candidates += 1;
            let cost = self.problem.cost.running(x, u)?;
            let sum = self.pair_row(&mean, &mut buf);
            match continuation(&buf, sum, weights, view) {
                PairValue::Continuation(c) => {
                    let value = stage_factor * cost + discount * c;
                    if best.is_none_or(|b| value < b.value) {
                        best = Some(Choice { value, control: q });
                    }
                }
                PairValue::Unsupported => unsupported += 1,
                PairValue::Inadmissible => {}
            }
        }
        Ok(match best {
            Some(c) => Backup::Chosen(c),
            None => Backup::NoAdmissible {
                all_unsupported: candidates > 0 && unsupported == candidates,
            },
        })
    }
}

/// Sweep engine: the kernel plus per-(particle, control) precomputation and
/// an optional cache of likelihood rows.
pub(crate) struct Engine<'a> {
    pub kernel: Kernel<'a>,
    n: usize,
    nq: usize,
    stage_cost: Vec<f64>,
    forward_ok: Vec<bool>,
    means: Vec<f64>,
    cached_pairs: usize,
    rows: Vec<f64>,
    sums: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(
        problem: &'a ProblemSpec,
        cloud: &'a ParticleCloud,
        grid: &'a ControlGrid,
        support: SupportFallback,
        cache_bytes: usize,
    ) -> Result<Self> {
        let n = cloud.len();
        let nq = grid.len();
        let dim = cloud.dim();
        let pairs = n * nq;
        let mut means = vec![0.0; pairs * dim];
        let mut stage_cost = vec![0.0; pairs];
        let mut forward_ok = vec![true; pairs];
        let kernel = Kernel {
            problem,
            cloud,
            grid,
            support,
        };
        for l in 0..n {
            let x = cloud.particle(l);
            for q in 0..nq {
                let p = l * nq + q;
                let u = grid.control(q);
                let mean = &mut means[p * dim..(p + 1) * dim];
                problem.dynamics.apply(x, u, mean);
                if mean.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!(
                        "dynamics produced a non-finite state from {x:?} under {u:?}"
                    )));
                }
                forward_ok[p] = kernel.forward_invariant(mean);
                stage_cost[p] = problem.cost.running(x, u)?;
            }
        }

        let row_bytes = n * std::mem::size_of::<f64>();
        let cached_pairs = pairs.min(cache_bytes / row_bytes.max(1));
        let mut rows = vec![0.0; cached_pairs * n];
        let sums: Vec<f64> = if n == 0 {
            Vec::new()
        } else {
            rows.par_chunks_mut(n)
                .enumerate()
                .map(|(p, out)| kernel.pair_row(&means[p * dim..(p + 1) * dim], out))
                .collect()
        };
        log::debug!("cached {cached_pairs} of {pairs} likelihood rows");
        Ok(Self {
            kernel,
            n,
            nq,
            stage_cost,
            forward_ok,
            means,
            cached_pairs,
            rows,
            sums,
        })
    }

    /// Running cost of particle `l` under the first control of the grid.
    pub fn reference_cost(&self, l: usize) -> f64 {
        self.stage_cost[l * self.nq]
    }

    pub fn backup_particle(
        &self,
        l: usize,
        weights: &[f64],
        stage_factor: f64,
        discount: f64,
        view: Option<&ConstraintView<'_>>,
        buf: &mut [f64],
    ) -> Backup {
        if view.is_some_and(|v| v.mask[l]) {
            return Backup::Skipped;
        }
        let dim = self.kernel.cloud.dim();
        let mut best: Option<Choice> = None;
        let mut candidates = 0;
        let mut unsupported = 0;
        for q in 0..self.nq {
            let p = l * self.nq + q;
            if !self.forward_ok[p] {
                continue;
            }
            candidates += 1;
            let value = if p < self.cached_pairs {
                continuation(&self.rows[p * self.n..(p + 1) * self.n], self.sums[p], weights, view)
            } else {
                let sum = self.kernel.pair_row(&self.means[p * dim..(p + 1) * dim], buf);
                continuation(buf, sum, weights, view)
            };
            match value {
                PairValue::Continuation(c) => {
                    let value = stage_factor * self.stage_cost[p] + discount * c;
                    if best.is_none_or(|b| value < b.value) {
                        best = Some(Choice { value, control: q });
                    }
                }
                PairValue::Unsupported => unsupported += 1,
                PairValue::Inadmissible => {}
            }
        }
        match best {
            Some(c) => Backup::Chosen(c),
            None => Backup::NoAdmissible {
                all_unsupported: candidates > 0 && unsupported == candidates,
            },
        }
    }

    /// One Jacobi sweep over all particles. Results come back in particle
    /// order and do not depend on the number of worker threads.
    pub fn sweep(
        &self,
        weights: &[f64],
        stage_factor: f64,
        discount: f64,
        view: Option<&ConstraintView<'_>>,
    ) -> Vec<Backup> {
        (0..self.n)
            .into_par_iter()
            .map_init(
                || vec![0.0; self.n],
                |buf, l| self.backup_particle(l, weights, stage_factor, discount, view, buf),
            )
            .collect()
    }

    /// The error to raise when particle `l` has no admissible control and
    /// constraints are not active.
    pub fn infeasibility_error(&self, l: usize, all_unsupported: bool) -> Error {
        let x = self.kernel.cloud.particle(l);
        if all_unsupported {
            let dim = self.kernel.cloud.dim();
            let mean = self.means[l * self.nq * dim..(l * self.nq + 1) * dim].to_vec();
            let nearest_distance = self.kernel.cloud.nearest(&mean).1;
            Error::NoSupportOverlap {
                predicted_mean: mean,
                nearest_distance,
            }
        } else {
            Error::InfeasibleState { state: x.to_vec() }
        }
    }
}
