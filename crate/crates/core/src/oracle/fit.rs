use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StateVector;

/// Least-squares fit `V(x) ≈ x'A x + a1'x + a0` with `A` symmetric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    /// Row-major `r × r` symmetric matrix of quadratic coefficients.
    pub a2: Vec<f64>,
    pub a1: Vec<f64>,
    pub a0: f64,
    pub rms: f64,
}

impl QuadraticFit {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = x.len();
        let mut v = self.a0;
        for i in 0..r {
            v += self.a1[i] * x[i];
            for j in 0..r {
                v += self.a2[i * r + j] * x[i] * x[j];
            }
        }
        v
    }
}

/// Ordinary least squares on the monomials `{1, x_i, x_i x_j (i ≤ j)}`.
pub fn fit_quadratic(states: &[StateVector], values: &[f64]) -> Result<QuadraticFit> {
    if states.len() != values.len() {
        return Err(Error::Dimension {
            what: "fit values",
            expected: states.len(),
            got: values.len(),
        });
    }
    let Some(first) = states.first() else {
        return Err(Error::Oracle("no data to fit".into()));
    };
    let r = first.dim();
    let pairs: Vec<(usize, usize)> = (0..r).flat_map(|i| (i..r).map(move |j| (i, j))).collect();
    let k = 1 + r + pairs.len();
    if states.len() < k {
        return Err(Error::Oracle(format!("need at least {k} points, got {}", states.len())));
    }
    let mut design = DMatrix::zeros(states.len(), k);
    for (row, s) in states.iter().enumerate() {
        if s.dim() != r {
            return Err(Error::Dimension { what: "fit state", expected: r, got: s.dim() });
        }
        let x = s.as_slice();
        design[(row, 0)] = 1.0;
        for i in 0..r {
            design[(row, 1 + i)] = x[i];
        }
        for (c, &(i, j)) in pairs.iter().enumerate() {
            design[(row, 1 + r + c)] = x[i] * x[j];
        }
    }
    let y = DVector::from_column_slice(values);
    let qr = design.clone().qr();
    let rmat = qr.r();
    let scale = rmat.diagonal().amax();
    if rmat.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale.max(1e-300)) {
        return Err(Error::Oracle("design matrix is rank deficient".into()));
    }
    let qty = qr.q().transpose() * &y;
    let coef = rmat
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Oracle("design matrix is rank deficient".into()))?;
    let resid = &design * &coef - &y;
    let rms = (resid.norm_squared() / states.len() as f64).sqrt();
    let mut a2 = vec![0.0; r * r];
    for (c, &(i, j)) in pairs.iter().enumerate() {
        let v = coef[1 + r + c];
        if i == j {
            a2[i * r + i] = v;
        } else {
            a2[i * r + j] = v / 2.0;
            a2[j * r + i] = v / 2.0;
        }
    }
    Ok(QuadraticFit {
        a2,
        a1: coef.rows(1, r).iter().copied().collect(),
        a0: coef[0],
        rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Vec<StateVector> {
        xs.iter().map(|&x| StateVector::new(vec![x]).unwrap()).collect()
    }

    #[test]
    fn exact_recovery() {
        let xs = [-2.0, -1.0, 0.0, 0.5, 1.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x * x + 3.0).collect();
        let fit = fit_quadratic(&pts(&xs), &ys).unwrap();
        assert!((fit.a2[0] - 2.0).abs() < 1e-10);
        assert!(fit.a1[0].abs() < 1e-10);
        assert!((fit.a0 - 3.0).abs() < 1e-10);
        assert!(fit.rms < 1e-10);
    }

    #[test]
    fn constant_values() {
        let fit = fit_quadratic(&pts(&[-1.0, 0.0, 2.0, 4.0]), &[7.0; 4]).unwrap();
        assert!(fit.a2[0].abs() < 1e-10 && fit.a1[0].abs() < 1e-10);
        assert!((fit.a0 - 7.0).abs() < 1e-10);
    }

    #[test]
    fn two_dimensional_cross_term() {
        let states: Vec<StateVector> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (-1.0, 2.0), (2.0, -1.0), (0.5, 0.3)]
            .iter()
            .map(|&(a, b)| StateVector::new(vec![a, b]).unwrap())
            .collect();
        let f = |x: &[f64]| x[0] * x[0] + 0.6 * x[0] * x[1] + 2.0 * x[1] * x[1] - x[1] + 1.0;
        let ys: Vec<f64> = states.iter().map(|s| f(s.as_slice())).collect();
        let fit = fit_quadratic(&states, &ys).unwrap();
        assert!((fit.a2[1] - 0.3).abs() < 1e-10 && (fit.a2[2] - 0.3).abs() < 1e-10);
        assert!((fit.eval(&[0.7, -0.4]) - f(&[0.7, -0.4])).abs() < 1e-10);
    }

    #[test]
    fn degenerate_design_is_rejected() {
        assert!(fit_quadratic(&pts(&[1.0, 1.0, 1.0, 2.0]), &[1.0, 1.0, 1.0, 2.0]).is_err());
        assert!(fit_quadratic(&pts(&[1.0, 2.0]), &[1.0, 2.0]).is_err());
    }
}
