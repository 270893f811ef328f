mod common;

use common::{constant_cost, grid1, scalar_problem, sv};
use particle_dp::{
    draw_particles, eval_policy, eval_value, simulate_rollout, value_iteration, BellmanOperator, BoxRegion,
    ConstraintSpec, Horizon, InfeasibleMode, RolloutOptions, SafeSet, SolverOptions, Termination, WeightVector,
};
use proptest::prelude::*;

fn discounted(alpha: f64, tol: f64) -> Horizon {
    Horizon::Discounted { alpha, tol, max_iters: 500 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_is_monotone(
        seed in any::<u64>(),
        n in 2usize..40,
        base in prop::collection::vec(-10.0..10.0f64, 40),
        bump in prop::collection::vec(0.0..5.0f64, 40),
        alpha in 0.1..0.99f64,
    ) {
        let spec = scalar_problem(0.9, 1.0, 4.0, 0.4, &[-1.0, 0.0, 0.5], discounted(alpha, 1e-6));
        let cloud = draw_particles(&spec.sampling, &spec.state_space, n, seed).unwrap();
        let grid = grid1(&[-1.0, 0.0, 0.5]);
        let op = BellmanOperator::new(&spec, &cloud, &grid, &SolverOptions::default()).unwrap();
        let lo = WeightVector::new(base[..n].to_vec(), 0);
        let hi = WeightVector::new(base[..n].iter().zip(&bump).map(|(a, b)| a + b).collect(), 0);
        let (tlo, thi) = (op.apply(&lo, None).unwrap(), op.apply(&hi, None).unwrap());
        for (a, b) in tlo.values.iter().zip(&thi.values) {
            prop_assert!(*a <= b + 1e-12);
        }
    }
}

#[test]
fn sup_changes_shrink_geometrically_and_stay_nonnegative() {
    let alpha = 0.8;
    let spec = scalar_problem(0.95, 1.0, 6.0, 0.5, &[-2.0, -1.0, 0.0, 1.0, 2.0], discounted(alpha, 1e-9));
    let cloud = draw_particles(&spec.sampling, &spec.state_space, 200, 3).unwrap();
    let grid = grid1(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
    let init = WeightVector::new(vec![0.0; 200], 0);
    let out = value_iteration(&spec, &cloud, &grid, &init, None, &SolverOptions::default()).unwrap();
    assert!(out.converged);
    for pair in out.reports.windows(2) {
        assert!(pair[1].sup_abs_change <= alpha * pair[0].sup_abs_change + 1e-10, "{pair:?}");
    }
    assert!(out.solution.final_weights().values.iter().all(|&w| w >= 0.0));
}

#[test]
fn zero_cost_is_fixed_after_one_sweep() {
    let mut spec = scalar_problem(1.0, 1.0, 3.0, 0.5, &[0.0, 1.0], discounted(0.9, 1e-3));
    spec.cost = constant_cost(0.0);
    let cloud = draw_particles(&spec.sampling, &spec.state_space, 50, 1).unwrap();
    let out = value_iteration(&spec, &cloud, &grid1(&[0.0, 1.0]), &WeightVector::new(vec![0.0; 50], 0), None, &SolverOptions::default()).unwrap();
    assert!(out.converged);
    assert_eq!(out.reports.len(), 1);
    assert!(out.solution.final_weights().values.iter().all(|&w| w == 0.0));
}

#[test]
fn converged_weights_are_self_consistent() {
    let tol = 1e-4;
    let spec = scalar_problem(0.95, 1.0, 6.0, 0.5, &[-1.0, -0.5, 0.0, 0.5, 1.0], discounted(0.9, tol));
    let cloud = draw_particles(&spec.sampling, &spec.state_space, 300, 5).unwrap();
    let grid = grid1(&[-1.0, -0.5, 0.0, 0.5, 1.0]);
    let out = value_iteration(&spec, &cloud, &grid, &WeightVector::new(vec![0.0; 300], 0), None, &SolverOptions::default()).unwrap();
    assert!(out.converged);
    let w = &out.solution.final_weights().values;
    for (l, p) in cloud.iter().enumerate() {
        let v = eval_value(&out.solution, &sv(p)).unwrap();
        assert!((v - w[l]).abs() <= tol * w[l].abs().max(1e-8), "particle {l}: {v} vs {}", w[l]);
    }
}

fn regulator() -> particle_dp::PolicySolution {
    let controls: Vec<f64> = (-20..=20).map(|i| f64::from(i) * 0.25).collect();
    let spec = scalar_problem(0.95, 1.0, 10.0, 0.5, &controls, discounted(0.9, 1e-4));
    let cloud = draw_particles(&spec.sampling, &spec.state_space, 600, 8).unwrap();
    let grid = grid1(&controls);
    let init = WeightVector::new(vec![0.0; 600], 0);
    value_iteration(&spec, &cloud, &grid, &init, None, &SolverOptions::default()).unwrap().solution
}

#[test]
fn rollouts_are_reproducible_and_regulate() {
    let sol = regulator();

    let empty = simulate_rollout(&sol, &sv(&[3.0]), 0, 1, RolloutOptions { noise: true }).unwrap();
    assert_eq!(empty.steps.len(), 1);
    assert_eq!(empty.steps[0].state, vec![3.0]);
    assert_eq!(empty.termination, Termination::Completed);

    let a = simulate_rollout(&sol, &sv(&[3.0]), 25, 42, RolloutOptions { noise: true }).unwrap();
    let b = simulate_rollout(&sol, &sv(&[3.0]), 25, 42, RolloutOptions { noise: true }).unwrap();
    assert_eq!(a.steps, b.steps);

    let nominal = simulate_rollout(&sol, &sv(&[8.0]), 30, 0, RolloutOptions::default()).unwrap();
    assert_eq!(nominal.termination, Termination::Completed);
    let norms: Vec<f64> = nominal.steps.iter().map(|s| s.state[0].abs()).collect();
    for pair in norms.windows(2) {
        assert!(pair[1] <= pair[0] || pair[0] < 0.2, "{norms:?}");
    }
    assert!(norms[norms.len() - 1] < 0.5, "{norms:?}");

    // The extracted law pushes toward the origin from both sides.
    assert!(eval_policy(&sol, &sv(&[4.0])).unwrap().as_slice()[0] < 0.0);
    assert!(eval_policy(&sol, &sv(&[-4.0])).unwrap().as_slice()[0] > 0.0);
}

fn interval_problem(mode: InfeasibleMode, threads: Option<usize>) -> (Vec<usize>, particle_dp::ValueIterationOutcome) {
    let spec = scalar_problem(1.0, 1.0, 5.0, 0.25, &[-1.0, 0.0, 1.0], discounted(0.9, 1e-3));
    let cloud = draw_particles(&spec.sampling, &spec.state_space, 400, 21).unwrap();
    let safe = SafeSet::Safe(vec![BoxRegion::from_pairs(&[[0.0, 5.0]]).unwrap()]);
    let constraints = ConstraintSpec::new(safe, 0.2, mode).unwrap();
    let options = SolverOptions { threads, ..SolverOptions::default() };
    let init = WeightVector::new(vec![0.0; 400], 0);
    let out = value_iteration(&spec, &cloud, &grid1(&[-1.0, 0.0, 1.0]), &init, Some(&constraints), &options).unwrap();
    let set = out.solution.constraints.as_ref().unwrap().infeasible_indices().iter().copied().collect();
    (set, out)
}

#[test]
fn infeasible_set_grows_monotonically_and_deterministically() {
    for mode in [InfeasibleMode::default(), InfeasibleMode::Renormalize] {
        let (one, out) = interval_problem(mode, Some(1));
        let (three, again) = interval_problem(mode, Some(3));
        assert_eq!(one, three);
        assert_eq!(out.solution.final_weights().values, again.solution.final_weights().values);

        let c = out.solution.constraints.as_ref().unwrap();
        assert!(c.initial_indices().is_subset(c.infeasible_indices()));
        assert!(!c.initial_indices().is_empty());
        for pair in out.reports.windows(2) {
            assert!(pair[1].infeasible_count >= pair[0].infeasible_count);
        }
        for (l, p) in out.solution.cloud.iter().enumerate() {
            let policy = out.solution.policy[0][l];
            assert_eq!(policy.is_none(), c.is_infeasible(l), "particle {l} at {p:?}");
        }
    }
}
