use crate::bellman::{Horizon, ProblemSpec, WeightVector};
use crate::error::{Error, Result};
use crate::sampling::{ControlGrid, ParticleCloud};

pub const TINY_MAX_PARTICLES: usize = 5;
pub const TINY_MAX_CONTROLS: usize = 3;
pub const TINY_MAX_STAGES: usize = 3;

/// Backward recursion written out with plain loops and linear-space
/// densities, for cross-checking the solver on tiny instances. Returns the
/// weights of stages `0..=T`.
pub fn exact_small_dp(spec: &ProblemSpec, cloud: &ParticleCloud, grid: &ControlGrid) -> Result<Vec<WeightVector>> {
    let Horizon::Finite { steps, cost_discount } = spec.horizon else {
        return Err(Error::Oracle("exact_small_dp needs a finite horizon".into()));
    };
    let n = cloud.len();
    let m = grid.len();
    if n == 0 || n > TINY_MAX_PARTICLES || m == 0 || m > TINY_MAX_CONTROLS || steps > TINY_MAX_STAGES {
        return Err(Error::Oracle(format!(
            "instance too large for the exact oracle: N={n}, controls={m}, T={steps}"
        )));
    }
    let r = cloud.dim();
    let mut particles = Vec::new();
    let mut sampling_density = Vec::new();
    for j in 0..n {
        let p = cloud.particle(j).to_vec();
        sampling_density.push(spec.sampling.log_density(&p).exp());
        particles.push(p);
    }

    let mut stages = vec![Vec::new(); steps + 1];
    stages[steps] = particles
        .iter()
        .map(|p| spec.cost.terminal(p).map(|v| v * cost_discount.powi(steps as i32)))
        .collect::<Result<Vec<_>>>()?;

    for k in (0..steps).rev() {
        let mut current = Vec::with_capacity(n);
        for l in 0..n {
            let mut best = f64::INFINITY;
            for q in 0..m {
                let u = grid.control(q);
                let mut next = vec![0.0; r];
                spec.dynamics.apply(&particles[l], u, &mut next);
                if let Some(support) = spec.noise.support() {
                    let lo = spec.state_space.bounds.lower();
                    let hi = spec.state_space.bounds.upper();
                    let fits = (0..r).all(|i| {
                        next[i] + support.lower()[i] >= lo[i] && next[i] + support.upper()[i] <= hi[i]
                    });
                    if !fits {
                        continue;
                    }
                }
                let mut c = vec![0.0; n];
                let mut total = 0.0;
                for j in 0..n {
                    let w: Vec<f64> = (0..r).map(|i| particles[j][i] - next[i]).collect();
                    c[j] = spec.noise.density(&w) / sampling_density[j];
                    total += c[j];
                }
                if total == 0.0 {
                    continue;
                }
                let mut expected = 0.0;
                for j in 0..n {
                    expected += stages[k + 1][j] * c[j] / total;
                }
                let value = cost_discount.powi(k as i32) * spec.cost.running(&particles[l], u)? + expected;
                if value < best {
                    best = value;
                }
            }
            if !best.is_finite() {
                return Err(Error::Oracle(format!("particle {l} has no usable control at stage {k}")));
            }
            current.push(best);
        }
        stages[k] = current;
    }
    Ok(stages
        .into_iter()
        .enumerate()
        .map(|(k, v)| WeightVector::new(v, k))
        .collect())
}
