//! Composite Gauss–Legendre rules on boxes.

use crate::geometry::BoxRegion;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor-product composite rule: each axis of `region` is split into
/// `panels` equal panels carrying an `order`-point Gauss–Legendre rule.
pub fn integrate_box<F>(region: &BoxRegion, panels: usize, order: usize, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = region.dim();
    let (nodes, weights) = gauss_legendre(order);
    let per_axis = panels * order;
    let axes: Vec<Vec<(f64, f64)>> = (0..dim)
        .map(|i| {
            let lo = region.lower()[i];
            let h = (region.upper()[i] - lo) / panels as f64;
            let mut pts = Vec::with_capacity(per_axis);
            for p in 0..panels {
                let a = lo + p as f64 * h;
                for (x, w) in nodes.iter().zip(&weights) {
                    pts.push((a + 0.5 * h * (x + 1.0), 0.5 * h * w));
                }
            }
            pts
        })
        .collect();

    let mut index = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for d in 0..dim {
            let (x, wd) = axes[d][index[d]];
            point[d] = x;
            w *= wd;
        }
        total += w * f(&point);
        // odometer increment
        let mut d = 0;
        loop {
            index[d] += 1;
            if index[d] < per_axis {
                break;
            }
            index[d] = 0;
            d += 1;
            if d == dim {
                return total;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5);
        // degree 9 is exact for 5 nodes
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((integral - 2.0 / 9.0).abs() < 1e-14);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn odd_rule_has_center_node() {
        let (x, _) = gauss_legendre(3);
        assert!(x[1].abs() < 1e-15);
        assert!((x[2] - (0.6f64).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn box_integral_of_product() {
        let region = BoxRegion::from_pairs(&[[0.0, 1.0], [0.0, 2.0]]).unwrap();
        let v = integrate_box(&region, 2, 4, |p| p[0] * p[1] * p[1]);
        assert!((v - 0.5 * 8.0 / 3.0).abs() < 1e-13);
    }
}
