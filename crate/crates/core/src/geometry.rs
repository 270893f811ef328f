use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower_0, upper_0] x ... x [lower_n, upper_n]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Config(format!(
                "box bounds must be nonempty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::Config(format!(
                    "box axis {i} has invalid bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Builds a box from `[lo, hi]` pairs, one per axis.
    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p[0]).collect(),
            pairs.iter().map(|p| p[1]).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn pairs(&self) -> Vec<[f64; 2]> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| [lo, hi])
            .collect()
    }

    /// Closed-box membership.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    pub fn contains_box(&self, other: &BoxRegion) -> bool {
        other.dim() == self.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] <= other.lower[i] && other.upper[i] <= self.upper[i])
    }

    /// Whether `center + self` (Minkowski shift) stays inside `outer`.
    pub fn shifted_inside(&self, center: &[f64], outer: &BoxRegion) -> bool {
        (0..self.dim()).all(|i| {
            center[i] + self.lower[i] >= outer.lower[i] && center[i] + self.upper[i] <= outer.upper[i]
        })
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// Intersection with another box; `None` when it has empty interior.
    pub fn intersect(&self, other: &BoxRegion) -> Option<BoxRegion> {
        if other.dim() != self.dim() {
            return None;
        }
        let lower: Vec<f64> = (0..self.dim())
            .map(|i| self.lower[i].max(other.lower[i]))
            .collect();
        let upper: Vec<f64> = (0..self.dim())
            .map(|i| self.upper[i].min(other.upper[i]))
            .collect();
        if lower.iter().zip(&upper).all(|(lo, hi)| lo < hi) {
            Some(BoxRegion { lower, upper })
        } else {
            None
        }
    }

    /// Projects `point` onto the box.
    pub fn clamp(&self, point: &mut [f64]) {
        for (i, x) in point.iter_mut().enumerate() {
            *x = x.clamp(self.lower[i], self.upper[i]);
        }
    }
}
