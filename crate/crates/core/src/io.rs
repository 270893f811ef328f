//! CSV and JSON artifacts, and reloading a solved archive.
//!
//! Every CSV starts with a `#` comment line carrying the tool version and the
//! three seeds, followed by a header row.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bellman::{PolicySolution, Rollout, WeightVector};
use crate::config::{ControlsConfig, Export, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::BoxRegion;
use crate::model::{ControlVector, StateVector};
use crate::oracle::QuadraticFit;
use crate::run::RunOutput;
use crate::sampling::{ControlGrid, GridProvenance, ParticleCloud};
use crate::VERSION;

pub const REPORT_VERSION: u32 = 1;
pub const ARCHIVE_FILE: &str = "solution.json";
pub const ARCHIVE_VERSION: u32 = 1;

pub fn comment_line(config: &RunConfig) -> String {
    let s = config.solver.seeds;
    format!(
        "# particle-dp {VERSION} seeds: particles={} controls={} noise={}",
        s.particles, s.controls, s.noise
    )
}

fn csv_writer(path: &Path, comment: &str) -> Result<csv::Writer<fs::File>> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "{comment}")?;
    Ok(csv::Writer::from_writer(file))
}

fn axis_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn write_weights(path: &Path, comment: &str, cloud: &ParticleCloud, w: &WeightVector) -> Result<()> {
    let mut wr = csv_writer(path, comment)?;
    let mut header = vec!["particle_index".to_string()];
    header.extend(axis_names("x", cloud.dim()));
    header.push("weight".into());
    wr.write_record(&header)?;
    for l in 0..cloud.len() {
        let mut rec = vec![l.to_string()];
        rec.extend(cloud.particle(l).iter().map(|v| v.to_string()));
        rec.push(w.values[l].to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Points of a regular grid over `bounds`, first axis varying slowest.
pub fn grid_points(bounds: &BoxRegion, resolution: &[usize]) -> Vec<Vec<f64>> {
    let dim = bounds.dim();
    let res: Vec<usize> = (0..dim).map(|i| *resolution.get(i).or(resolution.last()).unwrap_or(&2)).collect();
    let total: usize = res.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        out.push(
            (0..dim)
                .map(|i| {
                    let (lo, hi) = (bounds.lower()[i], bounds.upper()[i]);
                    lo + (hi - lo) * idx[i] as f64 / (res[i] - 1) as f64
                })
                .collect(),
        );
        for i in (0..dim).rev() {
            idx[i] += 1;
            if idx[i] < res[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    out
}

/// One evaluation row: value, control and feasibility, or the error text.
pub struct EvalRow {
    pub state: Vec<f64>,
    pub outcome: std::result::Result<(f64, Vec<f64>), String>,
}

/// Evaluates the solution at every point in parallel; order is preserved.
pub fn evaluate_points(sol: &PolicySolution, stage: usize, points: &[Vec<f64>]) -> Vec<EvalRow> {
    points
        .par_iter()
        .map(|p| EvalRow {
            state: p.clone(),
            outcome: StateVector::new(p.clone())
                .and_then(|x| sol.evaluate_at_stage(stage, &x))
                .map(|e| (e.value, e.control.into_inner()))
                .map_err(|e| e.to_string()),
        })
        .collect()
}

/// Writes `state, value, control, feasible, error` rows.
pub fn write_eval_rows<W: Write>(out: W, comment: &str, state_dim: usize, control_dim: usize, rows: &[EvalRow]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{comment}")?;
    let mut wr = csv::Writer::from_writer(out);
    let mut header = axis_names("x", state_dim);
    header.push("value".into());
    header.extend(axis_names("u", control_dim));
    header.push("feasible".into());
    header.push("error".into());
    wr.write_record(&header)?;
    for row in rows {
        let mut rec: Vec<String> = row.state.iter().map(|v| v.to_string()).collect();
        match &row.outcome {
            Ok((value, u)) => {
                rec.push(value.to_string());
                rec.extend(u.iter().map(|v| v.to_string()));
                rec.push("1".into());
                rec.push(String::new());
            }
            Err(msg) => {
                rec.push(String::new());
                rec.extend(std::iter::repeat_n(String::new(), control_dim));
                rec.push("0".into());
                rec.push(msg.clone());
            }
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub max_abs_relative_change: f64,
    pub sup_abs_change: f64,
    pub infeasible_count: usize,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub sampling_ms: f64,
    pub solve_ms: f64,
    pub export_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub report_version: u32,
    pub tool_version: String,
    /// `converged`, `not_converged`, `completed` (finite horizon) or `error`.
    pub status: String,
    pub converged: bool,
    pub iterations: Vec<IterationRecord>,
    pub timings: TimingReport,
    pub n_particles: usize,
    pub n_controls: usize,
    pub infeasible_count: usize,
    pub initial_unsafe_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<QuadraticFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seeds: crate::config::Seeds,
    pub config: RunConfig,
}

impl Report {
    pub fn from_run(out: &RunOutput) -> Self {
        let sol = &out.solution;
        let (infeasible, initial) = sol
            .constraints
            .as_ref()
            .map_or((0, 0), |c| (c.infeasible_indices().len(), c.initial_indices().len()));
        Self {
            report_version: REPORT_VERSION,
            tool_version: VERSION.into(),
            status: if sol.is_finite_horizon() {
                "completed"
            } else if out.converged {
                "converged"
            } else {
                "not_converged"
            }
            .into(),
            converged: out.converged,
            iterations: out
                .reports
                .iter()
                .map(|r| IterationRecord {
                    iteration: r.iteration,
                    max_abs_relative_change: r.max_abs_relative_change,
                    sup_abs_change: r.sup_abs_change,
                    infeasible_count: r.infeasible_count,
                    wall_time_ms: r.wall_time.as_secs_f64() * 1e3,
                })
                .collect(),
            timings: TimingReport {
                sampling_ms: out.timings.sampling.as_secs_f64() * 1e3,
                solve_ms: out.timings.solve.as_secs_f64() * 1e3,
                export_ms: 0.0,
            },
            n_particles: sol.cloud.len(),
            n_controls: sol.grid.len(),
            infeasible_count: infeasible,
            initial_unsafe_count: initial,
            penalty: sol.constraints.as_ref().map(|_| sol.penalty),
            fit: out.value_fit(),
            error: None,
            seeds: out.config.solver.seeds,
            config: out.config.clone(),
        }
    }

    /// Report for a run that failed before producing a solution.
    pub fn failed(config: &RunConfig, error: &Error) -> Self {
        Self {
            report_version: REPORT_VERSION,
            tool_version: VERSION.into(),
            status: "error".into(),
            converged: false,
            iterations: Vec::new(),
            timings: TimingReport::default(),
            n_particles: config.solver.n_particles,
            n_controls: 0,
            infeasible_count: 0,
            initial_unsafe_count: 0,
            penalty: None,
            fit: None,
            error: Some(error.to_string()),
            seeds: config.solver.seeds,
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("report.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

/// Writes every configured export plus the archive and the config echo.
/// Returns the files written.
pub fn write_artifacts(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cfg = &out.config;
    let sol = &out.solution;
    let cloud = &sol.cloud;
    let comment = comment_line(cfg);
    let r = cloud.dim();
    let m = sol.grid.dim();
    let mut written = Vec::new();

    if cfg.output.wants(Export::Particles) {
        let path = dir.join("particles.csv");
        let head = format!("{comment} n={} dim={r}", cloud.len());
        let mut wr = csv_writer(&path, &head)?;
        let mut header = axis_names("x", r);
        header.push("density_value".into());
        wr.write_record(&header)?;
        for l in 0..cloud.len() {
            let mut rec: Vec<String> = cloud.particle(l).iter().map(|v| v.to_string()).collect();
            rec.push(cloud.density_at(l).to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        written.push(path);
    }

    if cfg.output.wants(Export::Controls) {
        let path = dir.join("controls.csv");
        let mut wr = csv_writer(&path, &comment)?;
        let mut header = vec!["control_index".to_string()];
        header.extend(axis_names("u", m));
        wr.write_record(&header)?;
        for (q, u) in sol.grid.iter().enumerate() {
            let mut rec = vec![q.to_string()];
            rec.extend(u.iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        written.push(path);
    }

    if cfg.output.wants(Export::Weights) {
        let path = dir.join("weights_final.csv");
        write_weights(&path, &comment, cloud, sol.final_weights())?;
        written.push(path);
        if sol.is_finite_horizon() {
            for (k, w) in sol.weights.iter().enumerate() {
                let path = dir.join(format!("weights_stage_{k}.csv"));
                write_weights(&path, &comment, cloud, w)?;
                written.push(path);
            }
        }
    }

    if cfg.output.wants(Export::Policy) {
        let path = dir.join("policy_map.csv");
        let mut wr = csv_writer(&path, &comment)?;
        let mut header = vec!["particle_index".to_string()];
        header.extend(axis_names("x", r));
        header.push("control_index".into());
        header.extend(axis_names("u", m));
        header.push("value".into());
        wr.write_record(&header)?;
        let weights = sol.final_weights();
        for l in 0..cloud.len() {
            let mut rec = vec![l.to_string()];
            rec.extend(cloud.particle(l).iter().map(|v| v.to_string()));
            match sol.policy[0][l] {
                Some(q) => {
                    rec.push(q.to_string());
                    rec.extend(sol.grid.control(q).iter().map(|v| v.to_string()));
                }
                None => {
                    rec.push(String::new());
                    rec.extend(std::iter::repeat_n(String::new(), m));
                }
            }
            rec.push(num(weights.values[l]));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        written.push(path);
    }

    if let (true, Some(c)) = (cfg.output.wants(Export::Feasibility), &sol.constraints) {
        let path = dir.join("feasibility.csv");
        let mut wr = csv_writer(&path, &comment)?;
        let mut header = vec!["particle_index".to_string()];
        header.extend(axis_names("x", r));
        header.push("feasible".into());
        header.push("in_initial_unsafe".into());
        wr.write_record(&header)?;
        for l in 0..cloud.len() {
            let mut rec = vec![l.to_string()];
            rec.extend(cloud.particle(l).iter().map(|v| v.to_string()));
            rec.push(u8::from(!c.is_infeasible(l)).to_string());
            rec.push(u8::from(c.initial_indices().contains(&l)).to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        written.push(path);
    }

    if cfg.output.wants(Export::Iterations) && !out.reports.is_empty() {
        let path = dir.join("iterations.csv");
        let mut wr = csv_writer(&path, &comment)?;
        wr.write_record(["iteration", "max_abs_relative_change", "sup_abs_change", "infeasible_count", "wall_time_ms"])?;
        for rep in &out.reports {
            wr.write_record([
                rep.iteration.to_string(),
                rep.max_abs_relative_change.to_string(),
                rep.sup_abs_change.to_string(),
                rep.infeasible_count.to_string(),
                (rep.wall_time.as_secs_f64() * 1e3).to_string(),
            ])?;
        }
        wr.flush()?;
        written.push(path);
    }

    if cfg.output.wants(Export::Colormap) && r <= 2 {
        let path = dir.join("colormap.csv");
        let points = grid_points(&sol.problem.state_space.bounds, &cfg.output.colormap_resolution);
        let rows = evaluate_points(sol, 0, &points);
        write_eval_rows(fs::File::create(&path)?, &comment, r, m, &rows)?;
        written.push(path);
    }

    let path = dir.join("config.toml");
    fs::write(&path, format!("{comment}\n{}", cfg.to_toml_string()?))?;
    written.push(path);
    written.push(save_archive(dir, out)?);
    Ok(written)
}

/// Everything needed to evaluate a solution without re-solving.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Archive {
    pub archive_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub state_dim: usize,
    pub positions: Vec<f64>,
    pub control_dim: usize,
    pub controls: Vec<f64>,
    pub weights: Vec<WeightVector>,
    pub policy: Vec<Vec<Option<usize>>>,
    pub infeasible: Vec<usize>,
    pub initial_unsafe: Vec<usize>,
    pub penalty: f64,
    pub converged: bool,
}

pub fn save_archive(dir: &Path, out: &RunOutput) -> Result<PathBuf> {
    let sol = &out.solution;
    let (infeasible, initial_unsafe) = sol.constraints.as_ref().map_or((Vec::new(), Vec::new()), |c| {
        (
            c.infeasible_indices().iter().copied().collect(),
            c.initial_indices().iter().copied().collect(),
        )
    });
    let archive = Archive {
        archive_version: ARCHIVE_VERSION,
        tool_version: VERSION.into(),
        config: out.config.clone(),
        state_dim: sol.cloud.dim(),
        positions: sol.cloud.positions().to_vec(),
        control_dim: sol.grid.dim(),
        controls: sol.grid.iter().flatten().copied().collect(),
        weights: sol.weights.clone(),
        policy: sol.policy.clone(),
        infeasible,
        initial_unsafe,
        penalty: sol.penalty,
        converged: out.converged,
    };
    let path = dir.join(ARCHIVE_FILE);
    fs::write(&path, serde_json::to_string(&archive)?)?;
    Ok(path)
}

/// Loads an archive from a directory written by a solve, or from the
/// archive file itself. Densities are recomputed from the stored config.
pub fn load_archive(path: &Path) -> Result<(RunConfig, PolicySolution, bool)> {
    let file = if path.is_dir() { path.join(ARCHIVE_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::Archive(format!("cannot read {}: {e}", file.display())))?;
    let a: Archive = serde_json::from_str(&text).map_err(|e| Error::Archive(format!("{}: {e}", file.display())))?;
    if a.archive_version != ARCHIVE_VERSION {
        return Err(Error::Archive(format!("unsupported archive version {}", a.archive_version)));
    }
    let setup = a.config.setup()?;
    let problem = setup.problem;
    let cloud = ParticleCloud::from_positions(a.state_dim, a.positions, &problem.sampling, &problem.state_space)?;
    let provenance = match &a.config.problem.controls {
        ControlsConfig::Finite { .. } => GridProvenance::ExplicitFinite,
        ControlsConfig::Box { n_controls, .. } => GridProvenance::SampledFromCompact {
            seed: a.config.solver.seeds.controls,
            count: *n_controls,
        },
    };
    if a.control_dim == 0 || !a.controls.len().is_multiple_of(a.control_dim) {
        return Err(Error::Archive("malformed control table".into()));
    }
    let controls = a
        .controls
        .chunks(a.control_dim)
        .map(|c| ControlVector::new(c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let grid = ControlGrid::from_controls(&controls, provenance)?;
    let n = cloud.len();
    if a.weights.iter().any(|w| w.len() != n) || a.policy.iter().any(|p| p.len() != n) {
        return Err(Error::Archive("weight or policy table does not match the particle count".into()));
    }
    if a.weights.is_empty() || a.policy.is_empty() {
        return Err(Error::Archive("archive holds no weights".into()));
    }
    let constraints = setup.constraints.map(|c| {
        c.with_indices(
            a.initial_unsafe.iter().copied().collect::<BTreeSet<_>>(),
            a.infeasible.iter().copied().collect::<BTreeSet<_>>(),
        )
    });
    let solution = PolicySolution {
        problem,
        cloud,
        grid,
        weights: a.weights,
        policy: a.policy,
        constraints,
        penalty: a.penalty,
        support: setup.options.support,
    };
    Ok((a.config, solution, a.converged))
}

/// Rollout trajectory as `k, x_1.., u_1.., stage_cost, feasible`.
pub fn write_rollout<W: Write>(out: W, comment: &str, state_dim: usize, control_dim: usize, rollout: &Rollout) -> Result<()> {
    let mut out = out;
    writeln!(out, "{comment}")?;
    let mut wr = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    header.extend(axis_names("x", state_dim));
    header.extend(axis_names("u", control_dim));
    header.push("stage_cost".into());
    header.push("feasible".into());
    wr.write_record(&header)?;
    for step in &rollout.steps {
        let mut rec = vec![step.k.to_string()];
        rec.extend(step.state.iter().map(|v| v.to_string()));
        match &step.control {
            Some(u) => rec.extend(u.iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), control_dim)),
        }
        rec.push(step.stage_cost.map_or_else(String::new, |c| c.to_string()));
        rec.push(u8::from(step.feasible).to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads query states from a CSV file: one state per row, optional header,
/// `#` comments allowed.
pub fn read_states(path: &Path, state_dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                if v.len() != state_dim {
                    return Err(Error::Config(format!(
                        "{}: row {} has {} values, expected {state_dim}",
                        path.display(),
                        i + 1,
                        v.len()
                    )));
                }
                out.push(v);
            }
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Config(format!("{}: row {}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok(out)
}
