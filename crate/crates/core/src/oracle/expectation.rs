use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::BoxRegion;
use crate::model::{NoiseDensity, StateVector};
use crate::quadrature::integrate_box;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureSpec {
    /// Panels per axis.
    pub panels: usize,
    /// Gauss–Legendre points per panel.
    pub order: usize,
    /// Half-width of the integration window for unbounded noise, in marginal standard deviations.
    pub truncation_sigmas: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            panels: 64,
            order: 8,
            truncation_sigmas: 8.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExpectationEstimate {
    pub value: f64,
    /// Difference against the same rule on half as many panels.
    pub error_estimate: f64,
}

/// `∫ V(center + w) W(w) dw` by tensor Gauss–Legendre quadrature over the
/// noise support, or a truncated window for Gaussian noise.
pub fn brute_force_expectation(
    v: impl Fn(&[f64]) -> f64,
    center: &StateVector,
    noise: &NoiseDensity,
    spec: &QuadratureSpec,
) -> Result<ExpectationEstimate> {
    let dim = noise.dim();
    if dim > 3 {
        return Err(Error::Oracle(format!(
            "quadrature oracle supports at most 3 dimensions, got {dim}"
        )));
    }
    if center.dim() != dim {
        return Err(Error::Dimension {
            what: "center",
            expected: dim,
            got: center.dim(),
        });
    }
    if spec.panels < 2 || spec.order == 0 {
        return Err(Error::Oracle("quadrature needs at least 2 panels and order 1".into()));
    }
    let window = match noise {
        NoiseDensity::Gaussian(g) => {
            let s = spec.truncation_sigmas;
            let lo = (0..dim).map(|i| g.mean()[i] - s * g.marginal_std(i)).collect();
            let hi = (0..dim).map(|i| g.mean()[i] + s * g.marginal_std(i)).collect();
            BoxRegion::new(lo, hi)?
        }
        _ => noise.support().cloned().expect("bounded noise has a support box"),
    };
    let c = center.as_slice();
    let integrand = |w: &[f64]| {
        let x: Vec<f64> = w.iter().zip(c).map(|(a, b)| a + b).collect();
        v(&x) * noise.density(w)
    };
    let fine = integrate_box(&window, spec.panels, spec.order, integrand);
    let coarse = integrate_box(&window, spec.panels / 2, spec.order, integrand);
    Ok(ExpectationEstimate {
        value: fine,
        error_estimate: (fine - coarse).abs(),
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;

    fn sv(v: &[f64]) -> StateVector {
        StateVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn constant_integrand() {
        let noise = NoiseDensity::truncated_gaussian(
            vec![0.0],
            DMatrix::from_element(1, 1, 0.4),
            BoxRegion::from_pairs(&[[-1.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let e = brute_force_expectation(|_| 3.5, &sv(&[2.0]), &noise, &QuadratureSpec::default()).unwrap();
        assert!((e.value - 3.5).abs() < 1e-9);
    }

    #[test]
    fn gaussian_second_moment() {
        let noise = NoiseDensity::gaussian(vec![0.0], DMatrix::from_element(1, 1, 0.3)).unwrap();
        let e = brute_force_expectation(|x| x[0] * x[0], &sv(&[1.7]), &noise, &QuadratureSpec::default()).unwrap();
        assert!((e.value - (1.7 * 1.7 + 0.3)).abs() < 1e-6);
        assert!(e.error_estimate < 1e-6);
    }

    #[test]
    fn interval_mass() {
        let noise = NoiseDensity::gaussian(vec![0.0], DMatrix::from_element(1, 1, 0.25)).unwrap();
        let ind = |x: &[f64]| if (0.0..=5.0).contains(&x[0]) { 1.0 } else { 0.0 };
        let e = brute_force_expectation(ind, &sv(&[0.0]), &noise, &QuadratureSpec::default()).unwrap();
        // Phi(10) - Phi(0)
        assert!((e.value - 0.5).abs() < 1e-6, "{}", e.value);
    }

    #[test]
    fn two_dimensional_quadratic() {
        let cov = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        let noise = NoiseDensity::gaussian(vec![0.0, 0.0], cov).unwrap();
        let spec = QuadratureSpec { panels: 24, ..QuadratureSpec::default() };
        let e = brute_force_expectation(|x| x[0] * x[1], &sv(&[1.0, -2.0]), &noise, &spec).unwrap();
        assert!((e.value - (-2.0 + 0.1)).abs() < 1e-6);
    }

    #[test]
    fn refuses_high_dimensions() {
        let noise = NoiseDensity::gaussian(vec![0.0; 4], DMatrix::identity(4, 4)).unwrap();
        assert!(brute_force_expectation(|_| 1.0, &sv(&[0.0; 4]), &noise, &QuadratureSpec::default()).is_err());
    }
}
