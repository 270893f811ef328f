//! Run configuration: a TOML (or JSON) document with `problem`, `solver`,
//! `constraints` and `output` tables. Unknown keys are rejected.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bellman::{Horizon, ProblemSpec, SolverOptions, SupportFallback, WeightInit};
use crate::constraints::{ConstraintSpec, InfeasibleMode, SafeSet};
use crate::error::{Error, Result};
use crate::geometry::BoxRegion;
use crate::model::{
    ControlDensity, ControlSpace, ControlVector, DynamicsModel, Gaussian, NoiseDensity, SamplingDensity, StageCost,
    StateSpace, TerminalCost,
};

pub const EXAMPLE1: &str = include_str!("../configs/example1.cfg");
pub const EXAMPLE2: &str = include_str!("../configs/example2.cfg");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintsConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// `[[lo, hi], ...]`, one pair per state coordinate.
    pub state_box: Vec<[f64; 2]>,
    pub dynamics: DynamicsConfig,
    pub cost: CostConfig,
    pub noise: NoiseConfig,
    pub sampling: SamplingConfig,
    pub controls: ControlsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsConfig {
    /// `x' = F x + B u`
    Linear { f: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    /// The built-in two-state nonlinear benchmark.
    Example2 {},
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Terminal weight matrix; zero terminal cost when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        cov: Vec<Vec<f64>>,
    },
    TruncatedGaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        cov: Vec<Vec<f64>>,
        support: Vec<[f64; 2]>,
    },
    Uniform { support: Vec<[f64; 2]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingConfig {
    /// Uniform over the state box.
    Uniform {},
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub kind: ComponentKind,
    /// Gaussian components only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Uniform,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlsConfig {
    Finite { values: Vec<Vec<f64>> },
    /// `n_controls` samples from `density` restricted to `control_box`.
    Box {
        control_box: Vec<[f64; 2]>,
        n_controls: usize,
        #[serde(default)]
        density: ControlDensityConfig,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlDensityConfig {
    Uniform {},
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

impl Default for ControlDensityConfig {
    fn default() -> Self {
        Self::Uniform {}
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Discounted,
    Finite,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    #[default]
    ReferenceCost,
    Zero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportFallbackConfig {
    #[default]
    Error,
    NearestParticle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub particles: u64,
    pub controls: u64,
    pub noise: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            particles: 1,
            controls: 2,
            noise: 3,
        }
    }
}

fn default_alpha() -> f64 {
    0.9
}
fn default_tol() -> f64 {
    1e-3
}
fn default_max_iters() -> usize {
    1000
}
fn default_one() -> f64 {
    1.0
}
fn default_cache_mb() -> usize {
    1024
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub mode: SolveMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Number of stages `T` for the finite-horizon mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Per-stage cost discount for the finite-horizon mode.
    #[serde(default = "default_one")]
    pub cost_discount: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    pub n_particles: usize,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub support_fallback: SupportFallbackConfig,
    #[serde(default = "default_cache_mb")]
    pub cache_mb: usize,
    #[serde(default)]
    pub seeds: Seeds,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleValueConfig {
    #[default]
    Penalty,
    Renormalize,
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_penalty_factor() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsConfig {
    /// Each entry is a box `[[lo, hi], ...]`. Exactly one of `safe_boxes`
    /// and `unsafe_boxes` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safe_boxes: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsafe_boxes: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub infeasible_value: InfeasibleValueConfig,
    #[serde(default = "default_penalty_factor")]
    pub penalty_factor: f64,
    /// Fixed penalty weight; overrides `penalty_factor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_value: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Export {
    Particles,
    Weights,
    Policy,
    Feasibility,
    Iterations,
    Controls,
    Colormap,
}

pub const ALL_EXPORTS: [Export; 7] = [
    Export::Particles,
    Export::Weights,
    Export::Policy,
    Export::Feasibility,
    Export::Iterations,
    Export::Controls,
    Export::Colormap,
];

fn default_exports() -> Vec<Export> {
    ALL_EXPORTS.to_vec()
}
fn default_dir() -> String {
    "pdp-out".into()
}
fn default_resolution() -> Vec<usize> {
    vec![101]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_exports")]
    pub exports: Vec<Export>,
    /// Points per axis of the value/policy colormap grid (one entry per
    /// axis, or a single entry for all axes). Skipped for more than 2 states.
    #[serde(default = "default_resolution")]
    pub colormap_resolution: Vec<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            exports: default_exports(),
            colormap_resolution: default_resolution(),
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, e: Export) -> bool {
        self.exports.contains(&e)
    }
}

/// Everything needed to run a solve, built from a validated config.
#[derive(Clone, Debug)]
pub struct Setup {
    pub problem: ProblemSpec,
    pub constraints: Option<ConstraintSpec>,
    pub options: SolverOptions,
    pub init: WeightInit,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("{field}: expected a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn region(field: &str, pairs: &[[f64; 2]]) -> Result<BoxRegion> {
    BoxRegion::from_pairs(pairs).map_err(|e| Error::Config(format!("{field}: {e}")))
}

fn gaussian(field: &str, mean: Option<&[f64]>, cov: &[Vec<f64>]) -> Result<Gaussian> {
    let cov = matrix(&format!("{field}.cov"), cov)?;
    let mean = mean.map_or_else(|| vec![0.0; cov.nrows()], <[f64]>::to_vec);
    Gaussian::new(mean, cov).map_err(|e| Error::Config(format!("{field}: {e}")))
}

fn context<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{field}: {msg}")),
        other => Error::Config(format!("{field}: {other}")),
    })
}

impl RunConfig {
    /// Parses TOML, or JSON when `path` ends in `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every field by building the solver inputs.
    pub fn validate(&self) -> Result<()> {
        self.setup().map(|_| ())
    }

    pub fn state_dim(&self) -> usize {
        self.problem.state_box.len()
    }

    pub fn setup(&self) -> Result<Setup> {
        let p = &self.problem;
        let bounds = region("problem.state_box", &p.state_box)?;
        let r = bounds.dim();
        let state_space = StateSpace::new(bounds.clone());

        let dynamics = match &p.dynamics {
            DynamicsConfig::Linear { f, b } => context(
                "problem.dynamics",
                DynamicsModel::linear(matrix("problem.dynamics.f", f)?, matrix("problem.dynamics.b", b)?),
            )?,
            DynamicsConfig::Example2 {} => DynamicsModel::Example2Nonlinear,
        };
        if dynamics.state_dim() != r {
            return Err(Error::Config(format!(
                "problem.dynamics: state dimension {} does not match state_box dimension {r}",
                dynamics.state_dim()
            )));
        }
        let terminal = match &p.cost.terminal {
            Some(t) => TerminalCost::Quadratic(matrix("problem.cost.terminal", t)?),
            None => TerminalCost::Zero,
        };
        let cost = context(
            "problem.cost",
            StageCost::quadratic(matrix("problem.cost.q", &p.cost.q)?, matrix("problem.cost.r", &p.cost.r)?, terminal),
        )?;

        let noise = match &p.noise {
            NoiseConfig::Gaussian { mean, cov } => NoiseDensity::Gaussian(gaussian("problem.noise", mean.as_deref(), cov)?),
            NoiseConfig::TruncatedGaussian { mean, cov, support } => {
                let g = gaussian("problem.noise", mean.as_deref(), cov)?;
                context(
                    "problem.noise",
                    NoiseDensity::truncated_gaussian(g.mean().to_vec(), g.cov().clone(), region("problem.noise.support", support)?),
                )?
            }
            NoiseConfig::Uniform { support } => NoiseDensity::uniform(region("problem.noise.support", support)?),
        };

        let sampling = match &p.sampling {
            SamplingConfig::Uniform {} => SamplingDensity::UniformBox(bounds.clone()),
            SamplingConfig::Gaussian { mean, cov } => {
                SamplingDensity::Gaussian(gaussian("problem.sampling", Some(mean), cov)?)
            }
            SamplingConfig::Mixture { components } => {
                let mut parts = Vec::with_capacity(components.len());
                for (i, c) in components.iter().enumerate() {
                    let field = format!("problem.sampling.components[{i}]");
                    let density = match (c.kind, &c.cov) {
                        (ComponentKind::Uniform, None) if c.mean.is_none() => SamplingDensity::UniformBox(bounds.clone()),
                        (ComponentKind::Gaussian, Some(cov)) => SamplingDensity::Gaussian(gaussian(&field, c.mean.as_deref(), cov)?),
                        _ => {
                            return Err(Error::Config(format!(
                                "{field}: gaussian components need cov (and optionally mean); uniform components take neither"
                            )))
                        }
                    };
                    parts.push((c.weight, density));
                }
                context("problem.sampling", SamplingDensity::mixture(parts))?
            }
        };
        if !sampling.covers(&state_space) {
            return Err(Error::Config(
                "problem.sampling: density must be positive on the whole state box".into(),
            ));
        }

        let control_space = match &p.controls {
            ControlsConfig::Finite { values } => ControlSpace::FiniteList(
                values
                    .iter()
                    .map(|v| context("problem.controls.values", ControlVector::new(v.clone())))
                    .collect::<Result<Vec<_>>>()?,
            ),
            ControlsConfig::Box { control_box, n_controls, density } => ControlSpace::CompactBox {
                bounds: region("problem.controls.control_box", control_box)?,
                density: match density {
                    ControlDensityConfig::Uniform {} => ControlDensity::Uniform,
                    ControlDensityConfig::Gaussian { mean, cov } => {
                        ControlDensity::Gaussian(gaussian("problem.controls.density", Some(mean), cov)?)
                    }
                },
                count: *n_controls,
            },
        };

        let s = &self.solver;
        let horizon = match s.mode {
            SolveMode::Discounted => Horizon::Discounted {
                alpha: s.alpha,
                tol: s.tol,
                max_iters: s.max_iters,
            },
            SolveMode::Finite => Horizon::Finite {
                steps: s
                    .horizon
                    .ok_or_else(|| Error::Config("solver.horizon: required for mode = \"finite\"".into()))?,
                cost_discount: s.cost_discount,
            },
        };
        match s.mode {
            SolveMode::Discounted => {
                if !(s.alpha > 0.0 && s.alpha < 1.0) {
                    return Err(Error::Config(format!("solver.alpha: must lie in (0, 1), got {}", s.alpha)));
                }
                if !(s.tol.is_finite() && s.tol > 0.0) {
                    return Err(Error::Config(format!("solver.tol: must be positive, got {}", s.tol)));
                }
                if s.max_iters == 0 {
                    return Err(Error::Config("solver.max_iters: must be at least 1".into()));
                }
            }
            SolveMode::Finite => {
                if s.horizon == Some(0) {
                    return Err(Error::Config("solver.horizon: must be at least 1".into()));
                }
                if !(s.cost_discount.is_finite() && s.cost_discount > 0.0) {
                    return Err(Error::Config(format!("solver.cost_discount: must be positive, got {}", s.cost_discount)));
                }
            }
        }
        if s.n_particles == 0 {
            return Err(Error::Config("solver.n_particles: must be at least 1".into()));
        }
        let problem = ProblemSpec {
            dynamics,
            cost,
            noise,
            sampling,
            state_space,
            control_space,
            horizon,
        };
        context("problem", problem.validate())?;

        let constraints = self.constraints.as_ref().map(|c| c.build(&problem)).transpose()?;
        for r in &self.output.colormap_resolution {
            if *r < 2 {
                return Err(Error::Config("output.colormap_resolution: need at least 2 points per axis".into()));
            }
        }
        Ok(Setup {
            problem,
            constraints,
            options: SolverOptions {
                threads: None,
                cache_bytes: s.cache_mb.saturating_mul(1 << 20),
                support: match s.support_fallback {
                    SupportFallbackConfig::Error => SupportFallback::Error,
                    SupportFallbackConfig::NearestParticle => SupportFallback::NearestParticle,
                },
                ..SolverOptions::default()
            },
            init: match s.init {
                InitConfig::ReferenceCost => WeightInit::ReferenceCost,
                InitConfig::Zero => WeightInit::Zero,
            },
        })
    }
}

impl ConstraintsConfig {
    fn build(&self, problem: &ProblemSpec) -> Result<ConstraintSpec> {
        let boxes = |field: &str, list: &[Vec<[f64; 2]>]| {
            list.iter()
                .enumerate()
                .map(|(i, b)| region(&format!("{field}[{i}]"), b))
                .collect::<Result<Vec<_>>>()
        };
        let set = match (&self.safe_boxes, &self.unsafe_boxes) {
            (Some(s), None) => SafeSet::Safe(boxes("constraints.safe_boxes", s)?),
            (None, Some(u)) => SafeSet::Unsafe(boxes("constraints.unsafe_boxes", u)?),
            _ => {
                return Err(Error::Config(
                    "constraints: give exactly one of safe_boxes and unsafe_boxes".into(),
                ))
            }
        };
        context("constraints", set.validate(&problem.state_space))?;
        let mode = match self.infeasible_value {
            InfeasibleValueConfig::Penalty => {
                if !(self.penalty_factor.is_finite() && self.penalty_factor > 0.0) {
                    return Err(Error::Config("constraints.penalty_factor: must be positive".into()));
                }
                if self.penalty_value.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
                    return Err(Error::Config("constraints.penalty_value: must be finite and nonnegative".into()));
                }
                InfeasibleMode::Penalty {
                    factor: self.penalty_factor,
                    value: self.penalty_value,
                }
            }
            InfeasibleValueConfig::Renormalize => InfeasibleMode::Renormalize,
        };
        context("constraints", ConstraintSpec::new(set.clipped(&problem.state_space), self.epsilon, mode))
    }
}
