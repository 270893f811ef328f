//! Problem data: dynamics, costs, densities and control sets.
//!
//! Every type here is immutable once constructed and can be shared across
//! worker threads. Densities are evaluated in log-space; callers exponentiate
//! only inside normalized ratios.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure_dim, Error, Result};
use crate::geometry::BoxRegion;
use crate::quadrature::integrate_box;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

macro_rules! coordinate_vector {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(coords: Vec<f64>) -> Result<Self> {
                if coords.is_empty() {
                    return Err(Error::Config(concat!($what, " must have at least one coordinate").into()));
                }
                if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
                    return Err(Error::Config(format!(concat!($what, " has a non-finite entry {}"), bad)));
                }
                Ok(Self(coords))
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

coordinate_vector!(
    /// A point of the state space.
    StateVector,
    "state vector"
);
coordinate_vector!(
    /// A control input.
    ControlVector,
    "control vector"
);

/// The compact state set.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub bounds: BoxRegion,
}

impl StateSpace {
    pub fn new(bounds: BoxRegion) -> Self {
        Self { bounds }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds.contains(x)
    }
}

/// Multivariate normal with a cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    // row-major inverse of the Cholesky factor
    chol_inv: Vec<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::Config("gaussian needs a nonempty mean".into()));
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::Config(format!(
                "covariance must be {dim}x{dim}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("gaussian parameters must be finite".into()));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Config("covariance must be symmetric".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("covariance must be positive definite".into()))?
            .l();
        let inv = chol
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Config("covariance factor is singular".into()))?;
        let mut chol_inv = vec![0.0; dim * dim];
        for i in 0..dim {
            for k in 0..dim {
                chol_inv[i * dim + k] = inv[(i, k)];
            }
        }
        let log_det: f64 = 2.0 * (0..dim).map(|i| chol[(i, i)].ln()).sum::<f64>();
        Ok(Self {
            mean,
            cov,
            chol,
            chol_inv,
            log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
        })
    }

    /// Zero-mean, `variance * I`.
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], DMatrix::identity(dim, dim) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn marginal_std(&self, axis: usize) -> f64 {
        self.cov[(axis, axis)].sqrt()
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|k| i == k || self.cov[(i, k)] == 0.0))
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.quadratic_log_density(|k| x[k] - self.mean[k])
    }

    /// Log density of `point - shift`.
    #[inline]
    pub(crate) fn log_density_shifted(&self, point: &[f64], shift: &[f64]) -> f64 {
        self.quadratic_log_density(|k| point[k] - shift[k] - self.mean[k])
    }

    #[inline]
    fn quadratic_log_density(&self, centered: impl Fn(usize) -> f64) -> f64 {
        let r = self.mean.len();
        if r == 1 {
            let z = self.chol_inv[0] * centered(0);
            return self.log_norm - 0.5 * z * z;
        }
        let mut q = 0.0;
        for i in 0..r {
            let row = &self.chol_inv[i * r..i * r + i + 1];
            let mut z = 0.0;
            for (k, l) in row.iter().enumerate() {
                z += l * centered(k);
            }
            q += z * z;
        }
        self.log_norm - 0.5 * q
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let r = self.dim();
        let z: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..r {
            let mut v = self.mean[i];
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                v += self.chol[(i, k)] * zk;
            }
            out[i] = v;
        }
    }

    /// Probability mass the distribution places on `region`.
    fn mass_in(&self, region: &BoxRegion) -> Result<f64> {
        if self.is_diagonal() {
            let mut mass = 1.0;
            for i in 0..self.dim() {
                let n = Normal::new(self.mean[i], self.marginal_std(i))
                    .map_err(|e| Error::Config(e.to_string()))?;
                mass *= n.cdf(region.upper()[i]) - n.cdf(region.lower()[i]);
            }
            return Ok(mass);
        }
        if self.dim() > 3 {
            return Err(Error::Config(
                "truncated gaussian with correlated covariance is limited to 3 dimensions".into(),
            ));
        }
        let Some(window) = self.window(region, 12.0) else {
            return Ok(0.0);
        };
        Ok(integrate_box(&window, 48, 8, |p| self.log_density(p).exp()))
    }

    /// `region` intersected with the mean plus or minus `sigmas` marginal deviations.
    fn window(&self, region: &BoxRegion, sigmas: f64) -> Option<BoxRegion> {
        let lo: Vec<f64> = (0..self.dim())
            .map(|i| self.mean[i] - sigmas * self.marginal_std(i))
            .collect();
        let hi: Vec<f64> = (0..self.dim())
            .map(|i| self.mean[i] + sigmas * self.marginal_std(i))
            .collect();
        BoxRegion::new(lo, hi).ok()?.intersect(region)
    }
}

/// Density of the additive process noise.
#[derive(Clone, Debug)]
pub enum NoiseDensity {
    Gaussian(Gaussian),
    TruncatedGaussian {
        gaussian: Gaussian,
        support: BoxRegion,
        log_mass: f64,
    },
    UniformBox {
        support: BoxRegion,
        log_volume: f64,
    },
}

impl NoiseDensity {
    pub fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Ok(Self::Gaussian(Gaussian::new(mean, cov)?))
    }

    /// Gaussian restricted to `support` and renormalized. The normalizer is
    /// checked by quadrature for up to two dimensions.
    pub fn truncated_gaussian(mean: Vec<f64>, cov: DMatrix<f64>, support: BoxRegion) -> Result<Self> {
        let gaussian = Gaussian::new(mean, cov)?;
        ensure_dim("truncation box", gaussian.dim(), support.dim())?;
        let mass = gaussian.mass_in(&support)?;
        if !(mass > 1e-9) {
            return Err(Error::Config(format!(
                "truncation box carries negligible probability mass ({mass:e})"
            )));
        }
        let density = Self::TruncatedGaussian {
            gaussian,
            support,
            log_mass: mass.ln(),
        };
        density.check_normalization()?;
        Ok(density)
    }

    pub fn uniform(support: BoxRegion) -> Self {
        let log_volume = support.volume().ln();
        Self::UniformBox { support, log_volume }
    }

    fn check_normalization(&self) -> Result<()> {
        let Self::TruncatedGaussian { gaussian, support, .. } = self else {
            return Ok(());
        };
        if gaussian.dim() > 2 {
            return Ok(());
        }
        let Some(window) = gaussian.window(support, 12.0) else {
            return Ok(());
        };
        let total = integrate_box(&window, 48, 8, |p| self.log_density(p).exp());
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "truncated noise density integrates to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) | Self::TruncatedGaussian { gaussian: g, .. } => g.dim(),
            Self::UniformBox { support, .. } => support.dim(),
        }
    }

    /// Bounded support box, `None` for unbounded kinds.
    pub fn support(&self) -> Option<&BoxRegion> {
        match self {
            Self::Gaussian(_) => None,
            Self::TruncatedGaussian { support, .. } | Self::UniformBox { support, .. } => Some(support),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.support().is_some()
    }

    pub fn log_density(&self, w: &[f64]) -> f64 {
        match self {
            Self::Gaussian(g) => g.log_density(w),
            Self::TruncatedGaussian { gaussian, support, log_mass } => {
                if support.contains(w) {
                    gaussian.log_density(w) - log_mass
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::UniformBox { support, log_volume } => {
                if support.contains(w) {
                    -log_volume
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Log density of the noise value `point - center`.
    #[inline]
    pub(crate) fn log_density_shifted(&self, point: &[f64], center: &[f64]) -> f64 {
        match self {
            Self::Gaussian(g) => g.log_density_shifted(point, center),
            Self::TruncatedGaussian { gaussian, support, log_mass } => {
                if shifted_contains(support, point, center) {
                    gaussian.log_density_shifted(point, center) - log_mass
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::UniformBox { support, log_volume } => {
                if shifted_contains(support, point, center) {
                    -log_volume
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn density(&self, w: &[f64]) -> f64 {
        self.log_density(w).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match self {
            Self::Gaussian(g) => g.sample(rng, out),
            Self::TruncatedGaussian { gaussian, support, .. } => {
                for _ in 0..100_000 {
                    gaussian.sample(rng, out);
                    if support.contains(out) {
                        return Ok(());
                    }
                }
                return Err(Error::Sampling("truncated noise rejection cap reached".into()));
            }
            Self::UniformBox { support, .. } => {
                for (i, v) in out.iter_mut().enumerate() {
                    *v = rng.random_range(support.lower()[i]..=support.upper()[i]);
                }
            }
        }
        Ok(())
    }
}

fn shifted_contains(support: &BoxRegion, point: &[f64], center: &[f64]) -> bool {
    (0..support.dim()).all(|k| {
        let w = point[k] - center[k];
        support.lower()[k] <= w && w <= support.upper()[k]
    })
}

/// Density the particles are drawn from. Its support must be the whole state set.
#[derive(Clone, Debug)]
pub enum SamplingDensity {
    UniformBox(BoxRegion),
    Gaussian(Gaussian),
    Mixture(Vec<(f64, SamplingDensity)>),
}

impl SamplingDensity {
    /// Mixture with weights normalized to sum to one.
    pub fn mixture(components: Vec<(f64, SamplingDensity)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| *w).sum();
        if components.iter().any(|(w, _)| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        let dim = components[0].1.dim();
        if components.iter().any(|(_, c)| c.dim() != dim) {
            return Err(Error::Config("mixture components differ in dimension".into()));
        }
        Ok(Self::Mixture(
            components.into_iter().map(|(w, c)| (w / total, c)).collect(),
        ))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::UniformBox(b) => b.dim(),
            Self::Gaussian(g) => g.dim(),
            Self::Mixture(c) => c[0].1.dim(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            Self::UniformBox(b) => {
                if b.contains(x) {
                    -b.volume().ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Gaussian(g) => g.log_density(x),
            Self::Mixture(components) => {
                let logs: Vec<f64> = components
                    .iter()
                    .map(|(w, c)| w.ln() + c.log_density(x))
                    .collect();
                let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return max;
                }
                max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
            }
        }
    }

    /// Whether the density is strictly positive on all of `space`.
    pub fn covers(&self, space: &StateSpace) -> bool {
        match self {
            Self::UniformBox(b) => b.contains_box(&space.bounds),
            Self::Gaussian(_) => true,
            Self::Mixture(c) => c.iter().any(|(_, d)| d.covers(space)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Self::UniformBox(b) => {
                for (i, v) in out.iter_mut().enumerate() {
                    *v = rng.random_range(b.lower()[i]..=b.upper()[i]);
                }
            }
            Self::Gaussian(g) => g.sample(rng, out),
            Self::Mixture(components) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (w, c) in components {
                    acc += w;
                    if u < acc {
                        return c.sample(rng, out);
                    }
                }
                components[components.len() - 1].1.sample(rng, out)
            }
        }
    }
}

pub type DynamicsHook = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type RunningCostHook = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalCostHook = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Noise-free transition map `f(x, u)`.
#[derive(Clone)]
pub enum DynamicsModel {
    /// `f(x, u) = F x + B u`
    Linear { f: DMatrix<f64>, b: DMatrix<f64> },
    /// The two-state benchmark:
    /// `x1' = 0.9 x1 + 0.2 x2`, `x2' = -0.15 x1 + 0.9 x2 + 0.05 x1 x2 + u`.
    Example2Nonlinear,
    UserHook {
        state_dim: usize,
        control_dim: usize,
        hook: DynamicsHook,
    },
}

impl fmt::Debug for DynamicsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { f: a, b } => f.debug_struct("Linear").field("f", a).field("b", b).finish(),
            Self::Example2Nonlinear => f.write_str("Example2Nonlinear"),
            Self::UserHook { state_dim, control_dim, .. } => f
                .debug_struct("UserHook")
                .field("state_dim", state_dim)
                .field("control_dim", control_dim)
                .finish_non_exhaustive(),
        }
    }
}

impl DynamicsModel {
    pub fn linear(f: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if f.nrows() != f.ncols() || f.nrows() == 0 {
            return Err(Error::Config("F must be square and nonempty".into()));
        }
        if b.nrows() != f.nrows() || b.ncols() == 0 {
            return Err(Error::Config(format!(
                "B must have {} rows and at least one column",
                f.nrows()
            )));
        }
        if f.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("dynamics matrices must be finite".into()));
        }
        Ok(Self::Linear { f, b })
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Self::Linear { f, .. } => f.nrows(),
            Self::Example2Nonlinear => 2,
            Self::UserHook { state_dim, .. } => *state_dim,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            Self::Linear { b, .. } => b.ncols(),
            Self::Example2Nonlinear => 1,
            Self::UserHook { control_dim, .. } => *control_dim,
        }
    }

    /// Writes `f(x, u)` into `out`. Slices must already have the model's dimensions.
    #[inline]
    pub fn apply(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            Self::Linear { f, b } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let mut v = 0.0;
                    for (k, xk) in x.iter().enumerate() {
                        v += f[(i, k)] * xk;
                    }
                    for (k, uk) in u.iter().enumerate() {
                        v += b[(i, k)] * uk;
                    }
                    *o = v;
                }
            }
            Self::Example2Nonlinear => {
                out[0] = 0.9 * x[0] + 0.2 * x[1];
                out[1] = -0.15 * x[0] + 0.9 * x[1] + 0.05 * x[0] * x[1] + u[0];
            }
            Self::UserHook { hook, .. } => hook(x, u, out),
        }
    }
}

/// Running cost `l(x, u)`.
#[derive(Clone)]
pub enum RunningCost {
    /// `x'Qx + u'Ru`
    Quadratic { q: DMatrix<f64>, r: DMatrix<f64> },
    UserHook(RunningCostHook),
}

/// Terminal cost `l_T(x)`.
#[derive(Clone)]
pub enum TerminalCost {
    Zero,
    Quadratic(DMatrix<f64>),
    UserHook(TerminalCostHook),
}

impl fmt::Debug for RunningCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Quadratic { q, r } => f.debug_struct("Quadratic").field("q", q).field("r", r).finish(),
            Self::UserHook(_) => f.write_str("UserHook"),
        }
    }
}

impl fmt::Debug for TerminalCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("Zero"),
            Self::Quadratic(q) => f.debug_tuple("Quadratic").field(q).finish(),
            Self::UserHook(_) => f.write_str("UserHook"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageCost {
    pub running: RunningCost,
    pub terminal: TerminalCost,
}

impl StageCost {
    pub fn quadratic(q: DMatrix<f64>, r: DMatrix<f64>, terminal: TerminalCost) -> Result<Self> {
        check_psd("Q", &q)?;
        if r.nrows() != r.ncols() || r.clone().cholesky().is_none() {
            return Err(Error::Config("R must be symmetric positive definite".into()));
        }
        if let TerminalCost::Quadratic(qt) = &terminal {
            check_psd("Q_T", qt)?;
            ensure_dim("terminal cost matrix", q.nrows(), qt.nrows())?;
        }
        Ok(Self {
            running: RunningCost::Quadratic { q, r },
            terminal,
        })
    }

    /// `l(x, u)` without validation; use [`eval_stage_cost`] at API boundaries.
    #[inline]
    pub fn running_raw(&self, x: &[f64], u: &[f64]) -> f64 {
        match &self.running {
            RunningCost::Quadratic { q, r } => quadratic_form(q, x) + quadratic_form(r, u),
            RunningCost::UserHook(h) => h(x, u),
        }
    }

    pub fn running(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        checked_cost(self.running_raw(x, u), x)
    }

    pub fn terminal(&self, x: &[f64]) -> Result<f64> {
        let v = match &self.terminal {
            TerminalCost::Zero => 0.0,
            TerminalCost::Quadratic(q) => quadratic_form(q, x),
            TerminalCost::UserHook(h) => h(x),
        };
        checked_cost(v, x)
    }

    pub(crate) fn check_dims(&self, state_dim: usize, control_dim: usize) -> Result<()> {
        if let RunningCost::Quadratic { q, r } = &self.running {
            ensure_dim("Q", state_dim, q.nrows())?;
            ensure_dim("R", control_dim, r.nrows())?;
        }
        if let TerminalCost::Quadratic(q) = &self.terminal {
            ensure_dim("Q_T", state_dim, q.nrows())?;
        }
        Ok(())
    }
}

fn checked_cost(value: f64, x: &[f64]) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidCost {
            value,
            state: x.to_vec(),
        })
    }
}

#[inline]
fn quadratic_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for k in 0..n {
            row += m[(i, k)] * v[k];
        }
        total += v[i] * row;
    }
    total
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Config(format!("{name} must be square")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Config(format!("{name} must be symmetric")));
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-12 * scale {
        return Err(Error::Config(format!(
            "{name} must be positive semidefinite (min eigenvalue {min_eig})"
        )));
    }
    Ok(())
}

/// Density used to sample controls from a compact box.
#[derive(Clone, Debug)]
pub enum ControlDensity {
    Uniform,
    /// Gaussian restricted to the box by rejection.
    Gaussian(Gaussian),
}

/// Admissible control space.
#[derive(Clone, Debug)]
pub enum ControlSpace {
    FiniteList(Vec<ControlVector>),
    CompactBox {
        bounds: BoxRegion,
        density: ControlDensity,
        count: usize,
    },
}

impl ControlSpace {
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::FiniteList(list) => list.first().map(ControlVector::dim),
            Self::CompactBox { bounds, .. } => Some(bounds.dim()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::FiniteList(list) => {
                let Some(first) = list.first() else {
                    return Err(Error::Config("finite control list is empty".into()));
                };
                for (i, c) in list.iter().enumerate() {
                    ensure_dim("control", first.dim(), c.dim())?;
                    if list[..i].contains(c) {
                        return Err(Error::Config(format!(
                            "duplicate control {:?} in finite list",
                            c.as_slice()
                        )));
                    }
                }
                Ok(())
            }
            Self::CompactBox { bounds, density, count } => {
                if *count == 0 {
                    return Err(Error::Config("control sample count must be at least 1".into()));
                }
                if let ControlDensity::Gaussian(g) = density {
                    ensure_dim("control density", bounds.dim(), g.dim())?;
                }
                Ok(())
            }
        }
    }
}

pub fn eval_dynamics(model: &DynamicsModel, x: &StateVector, u: &ControlVector) -> Result<StateVector> {
    ensure_dim("state", model.state_dim(), x.dim())?;
    ensure_dim("control", model.control_dim(), u.dim())?;
    let mut out = vec![0.0; model.state_dim()];
    model.apply(x.as_slice(), u.as_slice(), &mut out);
    StateVector::new(out)
}

pub fn eval_noise_density(noise: &NoiseDensity, point: &StateVector) -> Result<f64> {
    ensure_dim("noise point", noise.dim(), point.dim())?;
    Ok(noise.density(point.as_slice()))
}

pub fn eval_stage_cost(cost: &StageCost, x: &StateVector, u: &ControlVector) -> Result<f64> {
    if let RunningCost::Quadratic { q, r } = &cost.running {
        ensure_dim("state", q.nrows(), x.dim())?;
        ensure_dim("control", r.nrows(), u.dim())?;
    }
    cost.running(x.as_slice(), u.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    fn sv(v: &[f64]) -> StateVector {
        StateVector::new(v.to_vec()).unwrap()
    }

    fn cv(v: &[f64]) -> ControlVector {
        ControlVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn linear_dynamics_examples() {
        let model = DynamicsModel::linear(m(1, 1, &[0.95]), m(1, 1, &[1.0])).unwrap();
        assert_eq!(eval_dynamics(&model, &sv(&[2.0]), &cv(&[0.0])).unwrap().as_slice(), &[1.9]);
        assert_eq!(eval_dynamics(&model, &sv(&[0.0]), &cv(&[0.0])).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn example2_dynamics_substitution() {
        let next = eval_dynamics(&DynamicsModel::Example2Nonlinear, &sv(&[1.0, 1.0]), &cv(&[0.0])).unwrap();
        assert!((next.as_slice()[0] - 1.1).abs() < 1e-15);
        assert!((next.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn dynamics_dimension_mismatch() {
        let model = DynamicsModel::Example2Nonlinear;
        assert!(matches!(
            eval_dynamics(&model, &sv(&[1.0]), &cv(&[0.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn noise_density_values() {
        let g = NoiseDensity::gaussian(vec![0.0], m(1, 1, &[0.5])).unwrap();
        assert!((eval_noise_density(&g, &sv(&[0.0])).unwrap() - 0.564_189_583_547_756_3).abs() < 1e-15);

        let u = NoiseDensity::uniform(BoxRegion::from_pairs(&[[-1.0, 1.0]]).unwrap());
        assert_eq!(eval_noise_density(&u, &sv(&[2.0])).unwrap(), 0.0);
        assert_eq!(eval_noise_density(&u, &sv(&[0.3])).unwrap(), 0.5);

        let t = NoiseDensity::truncated_gaussian(
            vec![0.0],
            m(1, 1, &[1.0]),
            BoxRegion::from_pairs(&[[-2.0, 2.0]]).unwrap(),
        )
        .unwrap();
        // phi(0) / (Phi(2) - Phi(-2)) from an independent high-precision evaluation
        assert!((eval_noise_density(&t, &sv(&[0.0])).unwrap() - 0.417_959_550_235_134_6).abs() < 1e-12);
        assert_eq!(eval_noise_density(&t, &sv(&[2.5])).unwrap(), 0.0);
    }

    #[test]
    fn non_spd_covariance_is_rejected() {
        assert!(NoiseDensity::gaussian(vec![0.0, 0.0], m(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(NoiseDensity::gaussian(vec![0.0, 0.0], m(2, 2, &[1.0, 0.1, 0.0, 1.0])).is_err());
        assert!(NoiseDensity::gaussian(vec![0.0], m(1, 1, &[0.0])).is_err());
    }

    #[test]
    fn bounded_noise_integrates_to_one() {
        let correlated = NoiseDensity::truncated_gaussian(
            vec![0.1, -0.2],
            m(2, 2, &[0.5, 0.2, 0.2, 0.3]),
            BoxRegion::from_pairs(&[[-1.0, 1.5], [-1.0, 0.8]]).unwrap(),
        )
        .unwrap();
        let uniform = NoiseDensity::uniform(BoxRegion::from_pairs(&[[-1.0, 2.0], [0.0, 0.5]]).unwrap());
        for noise in [correlated, uniform] {
            let support = noise.support().unwrap().clone();
            let total = integrate_box(&support, 40, 8, |p| noise.density(p));
            assert!((total - 1.0).abs() < 1e-6, "integral {total}");
        }
    }

    #[test]
    fn shifted_evaluation_matches_direct() {
        let g = NoiseDensity::gaussian(vec![0.2, 0.0], m(2, 2, &[0.4, 0.1, 0.1, 0.3])).unwrap();
        let p = [1.0, -0.5];
        let c = [0.3, 0.7];
        let direct = g.log_density(&[p[0] - c[0], p[1] - c[1]]);
        assert!((g.log_density_shifted(&p, &c) - direct).abs() < 1e-14);
    }

    #[test]
    fn stage_cost_examples() {
        let cost = StageCost::quadratic(m(1, 1, &[1.0]), m(1, 1, &[1.0]), TerminalCost::Zero).unwrap();
        assert_eq!(eval_stage_cost(&cost, &sv(&[2.0]), &cv(&[1.0])).unwrap(), 5.0);
        assert_eq!(eval_stage_cost(&cost, &sv(&[0.0]), &cv(&[0.0])).unwrap(), 0.0);

        let ex2 = StageCost::quadratic(DMatrix::identity(2, 2), m(1, 1, &[1.0]), TerminalCost::Zero).unwrap();
        assert_eq!(eval_stage_cost(&ex2, &sv(&[3.0, 4.0]), &cv(&[2.0])).unwrap(), 29.0);
    }

    #[test]
    fn negative_hook_cost_is_an_error() {
        let cost = StageCost {
            running: RunningCost::UserHook(Arc::new(|x, _| x[0])),
            terminal: TerminalCost::Zero,
        };
        assert!(matches!(
            eval_stage_cost(&cost, &sv(&[-1.0]), &cv(&[0.0])),
            Err(Error::InvalidCost { .. })
        ));
    }

    #[test]
    fn indefinite_cost_matrices_rejected() {
        assert!(StageCost::quadratic(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), TerminalCost::Zero).is_err());
        assert!(StageCost::quadratic(m(1, 1, &[1.0]), m(1, 1, &[0.0]), TerminalCost::Zero).is_err());
    }

    #[test]
    fn builtin_costs_nonnegative_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cost = StageCost::quadratic(
            m(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            m(1, 1, &[0.3]),
            TerminalCost::Quadratic(DMatrix::identity(2, 2)),
        )
        .unwrap();
        for _ in 0..10_000 {
            let x = [rng.random_range(-10.0..10.0), rng.random_range(-5.0..15.0)];
            let u = [rng.random_range(-3.0..3.0)];
            assert!(cost.running(&x, &u).unwrap() >= 0.0);
            assert!(cost.terminal(&x).unwrap() >= 0.0);
        }
    }

    #[test]
    fn sampling_density_positive_on_state_space() {
        let space = StateSpace::new(BoxRegion::from_pairs(&[[-10.0, 10.0], [-5.0, 15.0]]).unwrap());
        let densities = [
            SamplingDensity::UniformBox(space.bounds.clone()),
            SamplingDensity::Gaussian(Gaussian::isotropic(2, 4.0).unwrap()),
            SamplingDensity::mixture(vec![
                (0.3, SamplingDensity::UniformBox(space.bounds.clone())),
                (0.7, SamplingDensity::Gaussian(Gaussian::isotropic(2, 1.0).unwrap())),
            ])
            .unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in &densities {
            assert!(d.covers(&space));
            for _ in 0..10_000 {
                let x = [rng.random_range(-10.0..=10.0), rng.random_range(-5.0..=15.0)];
                assert!(d.log_density(&x).exp() > 0.0);
            }
        }
    }

    #[test]
    fn mixture_density_matches_weighted_sum() {
        let a = Gaussian::isotropic(1, 1.0).unwrap();
        let b = BoxRegion::from_pairs(&[[-2.0, 2.0]]).unwrap();
        let mix = SamplingDensity::mixture(vec![
            (1.0, SamplingDensity::Gaussian(a.clone())),
            (3.0, SamplingDensity::UniformBox(b)),
        ])
        .unwrap();
        let x = [0.7];
        let expected = 0.25 * a.log_density(&x).exp() + 0.75 * 0.25;
        assert!((mix.log_density(&x).exp() - expected).abs() < 1e-15);
    }

    #[test]
    fn dynamics_are_pure() {
        let model = DynamicsModel::Example2Nonlinear;
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        model.apply(&[0.3, -1.7], &[0.4], &mut a);
        model.apply(&[0.3, -1.7], &[0.4], &mut b);
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }
}
