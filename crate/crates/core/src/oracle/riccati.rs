use nalgebra::DMatrix;
use crate::error::{Error, Result};

/// Solution of the discounted LQG problem: `V(x) = x'Xx + q`, `u = -Kx`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrSolution {
    pub x: DMatrix<f64>,
    pub q: f64,
    pub gain: DMatrix<f64>,
    pub alpha: f64,
    pub noise_cov: DMatrix<f64>,
    pub iterations: usize,
}

impl LqrSolution {
    pub fn value(&self, state: &[f64]) -> f64 {
        let n = state.len();
        let mut v = self.q;
        for i in 0..n {
            for j in 0..n {
                v += state[i] * self.x[(i, j)] * state[j];
            }
        }
        v
    }

    /// `u = -Kx`.
    pub fn control(&self, state: &[f64]) -> Vec<f64> {
        (0..self.gain.nrows())
            .map(|i| -(0..state.len()).map(|j| self.gain[(i, j)] * state[j]).sum::<f64>())
            .collect()
    }
}

fn riccati_map(x: &DMatrix<f64>, f: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let ft = f.transpose();
    let bt = b.transpose();
    let s = r + alpha * &bt * x * b;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Oracle("R + αB'XB is singular".into()))?;
    let xb = x * b;
    Ok(q + alpha * &ft * x * f - alpha * alpha * &ft * &xb * s_inv * xb.transpose() * f)
}

/// Largest absolute entry of `X - Ric(X)`.
pub fn riccati_residual(sol: &LqrSolution, f: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<f64> {
    Ok((&sol.x - riccati_map(&sol.x, f, b, q, r, sol.alpha)?).amax())
}

/// Fixed-point iteration of the discounted Riccati map from `X_0 = Q`.
#[allow(clippy::too_many_arguments)]
pub fn solve_discounted_riccati(
    f: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    alpha: f64,
    noise_cov: &DMatrix<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<LqrSolution> {
    let n = f.nrows();
    if f.ncols() != n || b.nrows() != n || q.shape() != (n, n) || noise_cov.shape() != (n, n) {
        return Err(Error::Oracle("inconsistent LQR matrix shapes".into()));
    }
    let m = b.ncols();
    if r.shape() != (m, m) || r.clone().cholesky().is_none() {
        return Err(Error::Oracle("R must be symmetric positive definite".into()));
    }
    if q.clone().symmetric_eigenvalues().min() < -1e-12 {
        return Err(Error::Oracle("Q must be positive semidefinite".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Oracle(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut x = q.clone();
    for it in 1..=max_iters {
        let next = riccati_map(&x, f, b, q, r, alpha)?;
        let change = (&next - &x).amax();
        x = next;
        if !change.is_finite() {
            break;
        }
        if change <= tol {
            let s = r + alpha * b.transpose() * &x * b;
            let gain = alpha
                * s.try_inverse().ok_or_else(|| Error::Oracle("R + αB'XB is singular".into()))?
                * b.transpose()
                * &x
                * f;
            let q_offset = alpha * (&x * noise_cov).trace() / (1.0 - alpha);
            return Ok(LqrSolution {
                x,
                q: q_offset,
                gain,
                alpha,
                noise_cov: noise_cov.clone(),
                iterations: it,
            });
        }
    }
    Err(Error::Oracle(format!(
        "Riccati iteration did not reach {tol:e} in {max_iters} iterations"
    )))
}

/// `q = α X σ² / (1 - α)` for a scalar system.
pub fn discounted_offset(x: f64, sigma2: f64, alpha: f64) -> f64 {
    alpha * x * sigma2 / (1.0 - alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_example_golden_values() {
        let sol = solve_discounted_riccati(&s(0.95), &s(1.0), &s(1.0), &s(1.0), 0.9, &s(0.5), 1e-14, 10_000).unwrap();
        // Golden values from an independent 50-digit fixed-point evaluation.
        assert!((sol.x[(0, 0)] - 1.521_609_718_554_938).abs() < 1e-12);
        assert!((sol.q - 6.847_243_733_497_223).abs() < 1e-11);
        assert!((sol.gain[(0, 0)] - 0.549_062_861_636_777_2).abs() < 1e-12);
        let res = riccati_residual(&sol, &s(0.95), &s(1.0), &s(1.0), &s(1.0)).unwrap();
        assert!(res <= 1e-10);
    }

    #[test]
    fn memoryless_system() {
        let sol = solve_discounted_riccati(&s(0.0), &s(2.0), &s(1.0), &s(1.0), 0.8, &s(0.3), 1e-14, 100).unwrap();
        assert!((sol.x[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((sol.q - 0.8 * 0.3 / 0.2).abs() < 1e-12);
    }

    #[test]
    fn offset_identity_matches_reported_constants() {
        assert!((discounted_offset(1.460, 0.5, 0.9) - 6.570).abs() < 1e-12);
    }

    #[test]
    fn matrix_case_satisfies_fixed_point() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = s(0.5);
        let w = DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]);
        let sol = solve_discounted_riccati(&f, &b, &q, &r, 0.95, &w, 1e-13, 100_000).unwrap();
        assert!(riccati_residual(&sol, &f, &b, &q, &r).unwrap() <= 1e-10);
        assert!((sol.q - 0.95 * (&sol.x * &w).trace() / 0.05).abs() < 1e-10);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(solve_discounted_riccati(&s(1.0), &s(1.0), &s(1.0), &s(0.0), 0.9, &s(1.0), 1e-12, 100).is_err());
        assert!(solve_discounted_riccati(&s(1.0), &s(1.0), &s(1.0), &s(1.0), 1.0, &s(1.0), 1e-12, 100).is_err());
        assert!(solve_discounted_riccati(&s(0.95), &s(1.0), &s(1.0), &s(1.0), 0.9, &s(0.5), 1e-14, 2).is_err());
    }
}
