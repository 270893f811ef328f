#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DMatrix;
use particle_dp::{
    BoxRegion, ControlGrid, ControlSpace, ControlVector, DynamicsModel, GridProvenance, Horizon,
    NoiseDensity, ProblemSpec, RunningCost, SamplingDensity, StageCost, StateSpace, StateVector,
    TerminalCost,
};

pub fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

pub fn sv(v: &[f64]) -> StateVector {
    StateVector::new(v.to_vec()).unwrap()
}

pub fn grid1(controls: &[f64]) -> ControlGrid {
    let list: Vec<_> = controls.iter().map(|&u| ControlVector::new(vec![u]).unwrap()).collect();
    ControlGrid::from_controls(&list, GridProvenance::ExplicitFinite).unwrap()
}

/// `x' = f x + b u + w` on `[-half, half]` with uniform particles and `x² + u²` cost.
pub fn scalar_problem(f: f64, b: f64, half: f64, noise_var: f64, controls: &[f64], horizon: Horizon) -> ProblemSpec {
    let bounds = BoxRegion::from_pairs(&[[-half, half]]).unwrap();
    ProblemSpec {
        dynamics: DynamicsModel::linear(m1(f), m1(b)).unwrap(),
        cost: StageCost::quadratic(m1(1.0), m1(1.0), TerminalCost::Zero).unwrap(),
        noise: NoiseDensity::gaussian(vec![0.0], m1(noise_var)).unwrap(),
        sampling: SamplingDensity::UniformBox(bounds.clone()),
        state_space: StateSpace::new(bounds),
        control_space: ControlSpace::FiniteList(controls.iter().map(|&u| ControlVector::new(vec![u]).unwrap()).collect()),
        horizon,
    }
}

pub fn constant_cost(value: f64) -> StageCost {
    StageCost {
        running: RunningCost::UserHook(Arc::new(move |_, _| value)),
        terminal: TerminalCost::Zero,
    }
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().cdf(x)
}
