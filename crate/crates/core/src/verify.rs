//! Oracle batteries behind `pdp verify`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bellman::{solve_finite_horizon, BellmanOperator, Horizon, ProblemSpec, SolverOptions, WeightVector};
use crate::error::{Error, Result};
use crate::geometry::BoxRegion;
use crate::model::{
    ControlSpace, ControlVector, DynamicsModel, NoiseDensity, SamplingDensity, StageCost, StateSpace, StateVector,
    TerminalCost,
};
use crate::oracle::{
    brute_force_expectation, exact_small_dp, discounted_offset, riccati_residual, solve_discounted_riccati,
    QuadratureSpec,
};
use crate::sampling::{draw_particles, estimate_expectation, likelihood_row, ControlGrid, GridProvenance, ParticleCloud};

pub const SUITES: [&str; 4] = ["riccati", "contraction", "tiny", "is"];

#[derive(Clone, Debug, Serialize)]
pub struct BatteryReport {
    pub suite: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed violation or error, in the battery's own units.
    pub worst: f64,
    pub details: serde_json::Value,
}

impl BatteryReport {
    pub fn summary(&self) -> String {
        format!(
            "{:<12} {:>4}  {}/{} cases passed, worst {:.3e}",
            self.suite,
            if self.passed { "PASS" } else { "FAIL" },
            self.cases - self.failures,
            self.cases,
            self.worst
        )
    }
}

pub fn run_suite(name: &str) -> Result<Vec<BatteryReport>> {
    Ok(match name {
        "riccati" => vec![riccati_battery()?],
        "contraction" => vec![contraction_battery(50, 7)?],
        "tiny" => vec![tiny_dp_battery(100, 11)?],
        "is" => vec![is_consistency_battery(20)?],
        "all" => vec![
            riccati_battery()?,
            contraction_battery(50, 7)?,
            tiny_dp_battery(100, 11)?,
            is_consistency_battery(20)?,
        ],
        other => return Err(Error::Config(format!("unknown verify suite {other:?}; expected one of riccati, contraction, tiny, is, all"))),
    })
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n, 0.3);
    let mut m = &a * a.transpose();
    for i in 0..n {
        m[(i, i)] += rng.random_range(lo..hi);
    }
    m
}

/// Riccati residual and offset formula on the scalar benchmark and random
/// stabilizable systems, plus the offset identity on the reported constants.
pub fn riccati_battery() -> Result<BatteryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // (observed error, tolerance) per check
    let mut errors: Vec<(f64, f64)> = Vec::new();

    let sol = solve_discounted_riccati(&scalar(0.95), &scalar(1.0), &scalar(1.0), &scalar(1.0), 0.9, &scalar(0.5), 1e-14, 100_000)?;
    let golden = (sol.x[(0, 0)] - 1.521_609_718_554_938).abs();
    errors.push((golden, 1e-12));
    errors.push((riccati_residual(&sol, &scalar(0.95), &scalar(1.0), &scalar(1.0), &scalar(1.0))?, 1e-10));
    errors.push(((sol.q - 0.9 * (&sol.x * scalar(0.5)).trace() / 0.1).abs(), 1e-10));
    errors.push(((discounted_offset(1.460, 0.5, 0.9) - 6.570).abs(), 1e-12));

    for _ in 0..20 {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=2);
        let f = random_matrix(&mut rng, n, n, 0.6);
        let b = random_matrix(&mut rng, n, m, 1.0);
        let q = random_spd(&mut rng, n, 0.1, 2.0);
        let r = random_spd(&mut rng, m, 0.1, 2.0);
        let w = random_spd(&mut rng, n, 0.05, 0.5);
        let alpha = rng.random_range(0.5..0.95);
        let sol = solve_discounted_riccati(&f, &b, &q, &r, alpha, &w, 1e-13, 1_000_000)?;
        errors.push((riccati_residual(&sol, &f, &b, &q, &r)?, 1e-10));
        errors.push(((sol.q - alpha * (&sol.x * &w).trace() / (1.0 - alpha)).abs(), 1e-10));
    }
    let worst = errors.iter().map(|e| e.0).fold(0.0, f64::max);
    let failures = errors.iter().filter(|(e, tol)| e > tol).count();
    let cases = errors.len();
    Ok(BatteryReport {
        suite: "riccati".into(),
        passed: failures == 0,
        cases,
        failures,
        worst,
        details: serde_json::json!({
            "scalar_x": sol.x[(0, 0)],
            "scalar_q": sol.q,
            "scalar_gain": sol.gain[(0, 0)],
            "reported_offset_identity": discounted_offset(1.460, 0.5, 0.9),
        }),
    })
}

fn box_of(dim: usize, half: f64) -> BoxRegion {
    BoxRegion::new(vec![-half; dim], vec![half; dim]).expect("valid box")
}

fn random_grid(rng: &mut ChaCha8Rng, count: usize, dim: usize, scale: f64) -> ControlGrid {
    let mut list: Vec<ControlVector> = Vec::new();
    while list.len() < count {
        let c = ControlVector::new((0..dim).map(|_| rng.random_range(-scale..scale)).collect()).expect("finite");
        if !list.contains(&c) {
            list.push(c);
        }
    }
    ControlGrid::from_controls(&list, GridProvenance::ExplicitFinite).expect("nonempty grid")
}

fn random_problem(rng: &mut ChaCha8Rng, dim: usize, horizon: Horizon, grid: &ControlGrid) -> Result<ProblemSpec> {
    let half = 3.0;
    let bounds = box_of(dim, half);
    let sampling = if rng.random_bool(0.5) {
        SamplingDensity::UniformBox(bounds.clone())
    } else {
        SamplingDensity::Gaussian(crate::model::Gaussian::new(vec![0.0; dim], random_spd(rng, dim, 0.5, 3.0))?)
    };
    let terminal = if rng.random_bool(0.5) {
        TerminalCost::Zero
    } else {
        TerminalCost::Quadratic(DMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |_, _| rng.random_range(0.0..2.0))))
    };
    let m = grid.dim();
    Ok(ProblemSpec {
        dynamics: DynamicsModel::linear(random_matrix(rng, dim, dim, 1.0), random_matrix(rng, dim, m, 1.0))?,
        cost: StageCost::quadratic(
            DMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |_, _| rng.random_range(0.1..2.0))),
            DMatrix::from_diagonal(&nalgebra::DVector::from_fn(m, |_, _| rng.random_range(0.1..2.0))),
            terminal,
        )?,
        noise: NoiseDensity::Gaussian(crate::model::Gaussian::new(vec![0.0; dim], random_spd(rng, dim, 0.3, 1.5))?),
        sampling,
        state_space: StateSpace::new(bounds),
        control_space: ControlSpace::FiniteList((0..grid.len()).map(|q| grid.control_vector(q)).collect()),
        horizon,
    })
}

/// `sup |T(Ω) - T(Ω')| ≤ α sup |Ω - Ω'|` on random discounted instances.
pub fn contraction_battery(instances: usize, seed: u64) -> Result<BatteryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let dim = rng.random_range(1..=2);
        let alpha = rng.random_range(0.3..0.99);
        let n = rng.random_range(2..=50);
        let count = rng.random_range(1..=5);
        let grid = random_grid(&mut rng, count, 1, 2.0);
        let spec = random_problem(&mut rng, dim, Horizon::Discounted { alpha, tol: 1e-6, max_iters: 10 }, &grid)?;
        let cloud = draw_particles(&spec.sampling, &spec.state_space, n, rng.random())?;
        let op = BellmanOperator::new(&spec, &cloud, &grid, &SolverOptions::default())?;
        let a = WeightVector::new((0..n).map(|_| rng.random_range(-20.0..20.0)).collect(), 0);
        let b = WeightVector::new((0..n).map(|_| rng.random_range(-20.0..20.0)).collect(), 0);
        let ta = op.apply(&a, None)?;
        let tb = op.apply(&b, None)?;
        let sup = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let excess = sup(&ta.values, &tb.values) - alpha * sup(&a.values, &b.values);
        worst = worst.max(excess);
        if excess > 1e-10 {
            failures += 1;
        }
    }
    Ok(BatteryReport {
        suite: "contraction".into(),
        passed: failures == 0,
        cases: instances,
        failures,
        worst,
        details: serde_json::json!({ "max_excess_over_alpha_bound": worst }),
    })
}

/// Solver against the enumeration oracle on random tiny finite-horizon
/// instances, every stage, absolute tolerance `1e-12`.
pub fn tiny_dp_battery(instances: usize, seed: u64) -> Result<BatteryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let dim = rng.random_range(1..=2);
        let steps = rng.random_range(1..=3);
        let cost_discount = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.8..1.0) };
        let count = rng.random_range(1..=3);
        let control_dim = rng.random_range(1..=2);
        let grid = random_grid(&mut rng, count, control_dim, 1.5);
        let spec = random_problem(&mut rng, dim, Horizon::Finite { steps, cost_discount }, &grid)?;
        let n = rng.random_range(1..=5);
        let cloud = draw_particles(&spec.sampling, &spec.state_space, n, rng.random())?;
        let solved = solve_finite_horizon(&spec, &cloud, &grid, None, &SolverOptions::default())?;
        let exact = exact_small_dp(&spec, &cloud, &grid)?;
        let mut err = 0.0f64;
        for (a, b) in solved.weights.iter().zip(&exact) {
            for (x, y) in a.values.iter().zip(&b.values) {
                err = err.max((x - y).abs());
            }
        }
        worst = worst.max(err);
        if err > 1e-12 || solved.weights.len() != exact.len() {
            failures += 1;
        }
    }
    Ok(BatteryReport {
        suite: "tiny".into(),
        passed: failures == 0,
        cases: instances,
        failures,
        worst,
        details: serde_json::json!({ "max_abs_stage_weight_difference": worst }),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct IsConsistencyPoint {
    pub n: usize,
    pub mean_abs_error: f64,
    pub mean_rel_error: f64,
}

/// Importance-sampling estimate of `E[(m + w)²]` against quadrature, for
/// growing cloud sizes, averaged over `seeds` clouds.
pub fn is_consistency_curve(seeds: u64) -> Result<(f64, Vec<IsConsistencyPoint>)> {
    let space = StateSpace::new(box_of(1, 5.0));
    let sampling = SamplingDensity::UniformBox(space.bounds.clone());
    let noise = NoiseDensity::gaussian(vec![0.0], scalar(0.5))?;
    let center = StateVector::new(vec![1.0])?;
    let reference = brute_force_expectation(|x| x[0] * x[0], &center, &noise, &QuadratureSpec::default())?.value;
    let mut curve = Vec::new();
    for n in [100usize, 1_000, 10_000, 100_000] {
        let mut abs = 0.0;
        for s in 0..seeds {
            let cloud: ParticleCloud = draw_particles(&sampling, &space, n, 1000 + s)?;
            let weights = WeightVector::new(cloud.iter().map(|p| p[0] * p[0]).collect(), 0);
            let row = likelihood_row(&cloud, &noise, &center)?;
            abs += (estimate_expectation(&cloud, &weights, &row)? - reference).abs();
        }
        let mean_abs_error = abs / seeds as f64;
        curve.push(IsConsistencyPoint {
            n,
            mean_abs_error,
            mean_rel_error: mean_abs_error / reference.abs(),
        });
    }
    Ok((reference, curve))
}

/// Errors must shrink with `N` (one adjacent inversion allowed, endpoints
/// ordered) and the relative error at the largest `N` must be below 2%.
pub fn is_curve_passes(curve: &[IsConsistencyPoint]) -> bool {
    let inversions = curve.windows(2).filter(|w| w[1].mean_abs_error > w[0].mean_abs_error).count();
    let first = &curve[0];
    let last = &curve[curve.len() - 1];
    inversions <= 1 && last.mean_abs_error < first.mean_abs_error && last.mean_rel_error < 0.02
}

pub fn is_consistency_battery(seeds: u64) -> Result<BatteryReport> {
    let (reference, curve) = is_consistency_curve(seeds)?;
    let passed = is_curve_passes(&curve);
    Ok(BatteryReport {
        suite: "is".into(),
        passed,
        cases: curve.len(),
        failures: usize::from(!passed),
        worst: curve.last().map_or(f64::NAN, |p| p.mean_rel_error),
        details: serde_json::json!({ "reference": reference, "curve": curve }),
    })
}
