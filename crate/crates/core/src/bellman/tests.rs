use nalgebra::DMatrix;

use super::*;
use crate::constraints::SafeSet;
use crate::geometry::BoxRegion;
use crate::model::TerminalCost;
use crate::sampling::GridProvenance;

fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn toy_problem(horizon: Horizon, terminal: TerminalCost) -> ProblemSpec {
    let bounds = BoxRegion::from_pairs(&[[-3.0, 3.0]]).unwrap();
    ProblemSpec {
        dynamics: DynamicsModel::linear(m1(1.0), m1(1.0)).unwrap(),
        cost: StageCost::quadratic(m1(1.0), m1(1.0), terminal).unwrap(),
        noise: NoiseDensity::gaussian(vec![0.0], m1(0.5)).unwrap(),
        sampling: SamplingDensity::UniformBox(bounds.clone()),
        state_space: StateSpace::new(bounds),
        control_space: ControlSpace::FiniteList(vec![
            ControlVector::new(vec![0.0]).unwrap(),
            ControlVector::new(vec![1.0]).unwrap(),
        ]),
        horizon,
    }
}

fn toy_cloud(spec: &ProblemSpec, points: &[f64]) -> ParticleCloud {
    ParticleCloud::from_positions(1, points.to_vec(), &spec.sampling, &spec.state_space).unwrap()
}

fn toy_grid(controls: &[f64]) -> ControlGrid {
    let list: Vec<_> = controls.iter().map(|&u| ControlVector::new(vec![u]).unwrap()).collect();
    ControlGrid::from_controls(&list, GridProvenance::ExplicitFinite).unwrap()
}

fn sv(v: f64) -> StateVector {
    StateVector::new(vec![v]).unwrap()
}

#[test]
fn single_backup_matches_hand_value() {
    let spec = toy_problem(Horizon::Finite { steps: 1, cost_discount: 1.0 }, TerminalCost::Zero);
    let cloud = toy_cloud(&spec, &[0.0, 1.0, 2.0]);
    let next = WeightVector::new(vec![0.0, 1.0, 4.0], 1);
    let (value, u) = bellman_backup_at(&sv(0.0), &toy_grid(&[0.0, 1.0]), &next, &cloud, &spec, 1.0).unwrap();
    assert!((value - 0.318_239_476_587_399_6).abs() < 1e-12, "{value}");
    assert_eq!(u.as_slice(), &[0.0]);
}

#[test]
fn two_stage_recursion_matches_hand_values() {
    let spec = toy_problem(Horizon::Finite { steps: 2, cost_discount: 1.0 }, TerminalCost::Quadratic(m1(1.0)));
    let cloud = toy_cloud(&spec, &[0.0, 1.0, 2.0]);
    let sol = solve_finite_horizon(&spec, &cloud, &toy_grid(&[0.0, 1.0]), None, &SolverOptions::default()).unwrap();
    let w1 = [0.318_239_476_587_399_6, 2.423_883_115_234_171, 7.150_984_665_868_117];
    let w0 = [0.967_332_170_350_327_8, 3.979_478_988_328_365, 9.806_188_686_479_306];
    assert_eq!(sol.weights[2].values, vec![0.0, 1.0, 4.0]);
    for l in 0..3 {
        assert!((sol.weights[1].values[l] - w1[l]).abs() < 1e-12);
        assert!((sol.weights[0].values[l] - w0[l]).abs() < 1e-12);
    }
    assert!(sol.policy.iter().all(|stage| stage.iter().all(|&c| c == Some(0))));
}

#[test]
fn ties_go_to_the_lowest_index() {
    // Symmetric controls from x = 0 with a symmetric cloud give equal values.
    let spec = toy_problem(Horizon::Finite { steps: 1, cost_discount: 1.0 }, TerminalCost::Zero);
    let cloud = toy_cloud(&spec, &[-1.0, 0.0, 1.0]);
    let next = WeightVector::new(vec![1.0, 0.0, 1.0], 1);
    let (_, u) = bellman_backup_at(&sv(0.0), &toy_grid(&[1.0, -1.0]), &next, &cloud, &spec, 1.0).unwrap();
    assert_eq!(u.as_slice(), &[1.0]);
    let (_, u) = bellman_backup_at(&sv(0.0), &toy_grid(&[-1.0, 1.0]), &next, &cloud, &spec, 1.0).unwrap();
    assert_eq!(u.as_slice(), &[-1.0]);
}

#[test]
fn constant_cost_gives_geometric_value() {
    let mut spec = toy_problem(Horizon::Discounted { alpha: 0.9, tol: 1e-12, max_iters: 2000 }, TerminalCost::Zero);
    spec.cost.running = crate::model::RunningCost::UserHook(std::sync::Arc::new(|_, _| 1.0));
    let cloud = toy_cloud(&spec, &[-2.0, -0.5, 0.3, 1.7]);
    let grid = toy_grid(&[0.0, 0.5]);
    let init = initial_weights(&spec, &cloud, &grid, WeightInit::Zero).unwrap();
    let out = value_iteration(&spec, &cloud, &grid, &init, None, &SolverOptions::default()).unwrap();
    assert!(out.converged);
    for v in &out.solution.final_weights().values {
        assert!((v - 10.0).abs() < 1e-9, "{v}");
    }
    assert!((eval_value(&out.solution, &sv(0.1)).unwrap() - 10.0).abs() < 1e-9);
}

#[test]
fn operator_contracts_in_sup_norm() {
    let spec = toy_problem(Horizon::Discounted { alpha: 0.7, tol: 1e-6, max_iters: 10 }, TerminalCost::Zero);
    let cloud = toy_cloud(&spec, &[-2.5, -1.0, 0.0, 0.4, 1.1, 2.9]);
    let grid = toy_grid(&[-1.0, 0.0, 0.5]);
    let op = BellmanOperator::new(&spec, &cloud, &grid, &SolverOptions::default()).unwrap();
    let a = WeightVector::new(vec![0.0, 3.0, -1.0, 2.0, 5.0, 1.0], 0);
    let b = WeightVector::new(vec![1.0, -2.0, 4.0, 0.5, 0.0, 2.0], 0);
    let ta = op.apply(&a, None).unwrap();
    let tb = op.apply(&b, None).unwrap();
    let sup = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(sup(&ta.values, &tb.values) <= 0.7 * sup(&a.values, &b.values) + 1e-12);
}

#[test]
fn cached_and_uncached_sweeps_agree_bitwise() {
    let spec = toy_problem(Horizon::Discounted { alpha: 0.9, tol: 1e-4, max_iters: 50 }, TerminalCost::Zero);
    let cloud = crate::sampling::draw_particles(&spec.sampling, &spec.state_space, 40, 3).unwrap();
    let grid = toy_grid(&[-1.0, -0.3, 0.0, 0.6, 1.0]);
    let init = initial_weights(&spec, &cloud, &grid, WeightInit::ReferenceCost).unwrap();
    let run = |cache_bytes| {
        let options = SolverOptions { cache_bytes, ..SolverOptions::default() };
        value_iteration(&spec, &cloud, &grid, &init, None, &options).unwrap()
    };
    let full = run(1 << 30);
    let partial = run(40 * 8 * 37);
    let none = run(0);
    assert_eq!(full.solution.final_weights(), partial.solution.final_weights());
    assert_eq!(full.solution.final_weights(), none.solution.final_weights());
    assert_eq!(full.solution.policy, none.solution.policy);
}

#[test]
fn evaluation_at_particles_reproduces_weights() {
    let spec = toy_problem(Horizon::Discounted { alpha: 0.9, tol: 1e-300, max_iters: 30 }, TerminalCost::Zero);
    let cloud = crate::sampling::draw_particles(&spec.sampling, &spec.state_space, 25, 8).unwrap();
    let grid = toy_grid(&[-1.0, 0.0, 1.0]);
    let init = initial_weights(&spec, &cloud, &grid, WeightInit::ReferenceCost).unwrap();
    let out = value_iteration(&spec, &cloud, &grid, &init, None, &SolverOptions::default()).unwrap();
    assert!(!out.converged);
    // One more backup at a particle equals the next iterate, bit for bit.
    let op = BellmanOperator::new(&spec, &cloud, &grid, &SolverOptions::default()).unwrap();
    let next = op.apply(out.solution.final_weights(), None).unwrap();
    for l in 0..cloud.len() {
        let x = StateVector::new(cloud.particle(l).to_vec()).unwrap();
        assert_eq!(eval_value(&out.solution, &x).unwrap(), next.values[l]);
    }
}

#[test]
fn queries_outside_the_state_set_fail() {
    let spec = toy_problem(Horizon::Finite { steps: 1, cost_discount: 1.0 }, TerminalCost::Zero);
    let cloud = toy_cloud(&spec, &[0.0, 1.0]);
    let sol = solve_finite_horizon(&spec, &cloud, &toy_grid(&[0.0]), None, &SolverOptions::default()).unwrap();
    assert!(matches!(sol.evaluate(&sv(4.0)), Err(Error::OutsideStateSpace { .. })));
    assert!(matches!(sol.evaluate(&StateVector::new(vec![0.0, 0.0]).unwrap()), Err(Error::Dimension { .. })));
}

#[test]
fn missing_support_is_reported_or_bridged() {
    let mut spec = toy_problem(Horizon::Finite { steps: 1, cost_discount: 1.0 }, TerminalCost::Zero);
    spec.noise = NoiseDensity::uniform(BoxRegion::from_pairs(&[[-0.1, 0.1]]).unwrap());
    let cloud = toy_cloud(&spec, &[-2.0, 1.5]);
    let grid = toy_grid(&[0.0]);
    let grid_far = toy_grid(&[1.0]);
    let err = solve_finite_horizon(&spec, &cloud, &grid_far, None, &SolverOptions::default()).unwrap_err();
    assert!(matches!(err, Error::NoSupportOverlap { .. }), "{err}");
    let options = SolverOptions { support: SupportFallback::NearestParticle, ..SolverOptions::default() };
    assert!(solve_finite_horizon(&spec, &cloud, &grid_far, None, &options).is_ok());
    assert!(solve_finite_horizon(&spec, &cloud, &grid, None, &SolverOptions::default()).is_ok());
}

#[test]
fn constrained_solve_grows_the_infeasible_set() {
    let spec = toy_problem(Horizon::Discounted { alpha: 0.9, tol: 1e-6, max_iters: 200 }, TerminalCost::Zero);
    let cloud = crate::sampling::draw_particles(&spec.sampling, &spec.state_space, 60, 5).unwrap();
    let grid = toy_grid(&[-1.0, 0.0, 1.0]);
    let unsafe_box = BoxRegion::from_pairs(&[[2.0, 3.0]]).unwrap();
    let cons = ConstraintSpec::new(SafeSet::Unsafe(vec![unsafe_box]), 0.05, InfeasibleMode::default()).unwrap();
    let init = initial_weights(&spec, &cloud, &grid, WeightInit::ReferenceCost).unwrap();
    let out = value_iteration(&spec, &cloud, &grid, &init, Some(&cons), &SolverOptions::default()).unwrap();
    let c = out.solution.constraints.as_ref().unwrap();
    assert!(!c.initial_indices().is_empty());
    assert!(c.infeasible_indices().is_superset(c.initial_indices()));
    assert!(out.solution.penalty > 0.0);
    for &l in c.infeasible_indices() {
        assert_eq!(out.solution.final_weights().values[l], out.solution.penalty);
    }
    assert!(matches!(out.solution.evaluate(&sv(2.5)), Err(Error::InfeasibleState { .. })));
}

#[test]
fn thread_count_does_not_change_results() {
    let spec = toy_problem(Horizon::Discounted { alpha: 0.9, tol: 1e-5, max_iters: 100 }, TerminalCost::Zero);
    let cloud = crate::sampling::draw_particles(&spec.sampling, &spec.state_space, 80, 1).unwrap();
    let grid = toy_grid(&[-1.0, -0.5, 0.0, 0.5, 1.0]);
    let init = initial_weights(&spec, &cloud, &grid, WeightInit::ReferenceCost).unwrap();
    let run = |threads| {
        let options = SolverOptions { threads: Some(threads), ..SolverOptions::default() };
        value_iteration(&spec, &cloud, &grid, &init, None, &options).unwrap()
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.solution.final_weights(), b.solution.final_weights());
    assert_eq!(a.reports.len(), b.reports.len());
}
