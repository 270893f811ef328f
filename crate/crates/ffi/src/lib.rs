//! C ABI for the particle-dp solver.
//!
//! Solutions live behind an opaque `PdpSolution` handle. Every function
//! returns a `PdpStatus`; on failure a message for the calling thread is
//! available from `pdp_last_error_message`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::DMatrix;
use particle_dp::config::RunConfig;
use particle_dp::io::{load_archive, write_artifacts, Report};
use particle_dp::oracle::solve_discounted_riccati;
use particle_dp::run::{run, RunOutput};
use particle_dp::{Error, PolicySolution, StateVector};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    OutsideStateSpace = 5,
    InfeasibleState = 6,
    NoSupportOverlap = 7,
    AllInfeasible = 8,
    NotConverged = 9,
    Io = 10,
    BufferTooSmall = 11,
    Internal = 12,
    Panic = 13,
}

/// Opaque solved problem.
pub struct PdpSolution {
    solution: PolicySolution,
    run: Option<RunOutput>,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> PdpStatus {
    match e {
        Error::Config(_) | Error::Archive(_) | Error::Json(_) => PdpStatus::Config,
        Error::Dimension { .. } => PdpStatus::Dimension,
        Error::OutsideStateSpace { .. } => PdpStatus::OutsideStateSpace,
        Error::InfeasibleState { .. } | Error::InvalidCost { .. } => PdpStatus::InfeasibleState,
        Error::NoSupportOverlap { .. } => PdpStatus::NoSupportOverlap,
        Error::AllInfeasible => PdpStatus::AllInfeasible,
        Error::NotConverged { .. } => PdpStatus::NotConverged,
        Error::Io(_) | Error::Csv(_) => PdpStatus::Io,
        _ => PdpStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PdpStatus, String)>) -> PdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PdpStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside particle-dp");
            PdpStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (PdpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null() -> (PdpStatus, String) {
    (PdpStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, (PdpStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PdpStatus::InvalidArgument, "string is not valid UTF-8".into()))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize) -> Result<&'a [f64], (PdpStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a>(sol: *const PdpSolution) -> Result<&'a PdpSolution, (PdpStatus, String)> {
    sol.as_ref().ok_or_else(null)
}

fn solve_into(cfg: RunConfig, threads: usize, out: *mut *mut PdpSolution) -> Result<(), (PdpStatus, String)> {
    let threads = (threads > 0).then_some(threads);
    let result = run(&cfg, threads).map_err(lib_err)?;
    let boxed = Box::new(PdpSolution {
        solution: result.solution.clone(),
        converged: result.converged,
        run: Some(result),
    });
    // SAFETY: checked non-null by the callers.
    unsafe { *out = Box::into_raw(boxed) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pdp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failed call on this thread, or an empty
/// string. Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn pdp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Solves the problem described by a TOML config document. `threads == 0`
/// uses all cores. A solve that stops at `max_iters` still returns a handle;
/// check `pdp_solution_converged`.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdp_solve_config(config_toml: *const c_char, threads: usize, out: *mut *mut PdpSolution) -> PdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = std::ptr::null_mut();
        let cfg = RunConfig::from_toml_str(str_arg(config_toml)?).map_err(lib_err)?;
        solve_into(cfg, threads, out)
    })
}

/// Like `pdp_solve_config`, reading the config from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdp_solve_config_file(path: *const c_char, threads: usize, out: *mut *mut PdpSolution) -> PdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = std::ptr::null_mut();
        let cfg = RunConfig::from_path(Path::new(str_arg(path)?)).map_err(lib_err)?;
        solve_into(cfg, threads, out)
    })
}

/// Loads a solution directory written by `pdp solve` or `pdp_solution_write`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdp_load_archive(path: *const c_char, out: *mut *mut PdpSolution) -> PdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = std::ptr::null_mut();
        let (_, solution, converged) = load_archive(Path::new(str_arg(path)?)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(PdpSolution {
            solution,
            run: None,
            converged,
        }));
        Ok(())
    })
}

/// Writes all artifacts of a solve (CSVs, report, archive) into `dir`.
/// Only handles produced by a solve can be written.
///
/// # Safety
/// `sol` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pdp_solution_write(sol: *const PdpSolution, dir: *const c_char) -> PdpStatus {
    guard(|| {
        let h = handle(sol)?;
        let dir = Path::new(str_arg(dir)?);
        let Some(out) = &h.run else {
            return Err((PdpStatus::InvalidArgument, "loaded archives cannot be re-exported".into()));
        };
        write_artifacts(dir, out).map_err(lib_err)?;
        Report::from_run(out).write(dir).map_err(lib_err)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdp_solution_free(sol: *mut PdpSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Sizes of a solution. Any output pointer may be null.
///
/// # Safety
/// `sol` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn pdp_solution_dims(
    sol: *const PdpSolution,
    state_dim: *mut usize,
    control_dim: *mut usize,
    particles: *mut usize,
    controls: *mut usize,
    stages: *mut usize,
) -> PdpStatus {
    guard(|| {
        let s = &handle(sol)?.solution;
        for (p, v) in [
            (state_dim, s.cloud.dim()),
            (control_dim, s.grid.dim()),
            (particles, s.cloud.len()),
            (controls, s.grid.len()),
            (stages, s.decision_stages()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// 1 if value iteration converged (always 1 for finite horizon), else 0.
///
/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdp_solution_converged(sol: *const PdpSolution) -> i32 {
    sol.as_ref().map_or(0, |h| i32::from(h.converged))
}

/// Evaluates the value and the minimizing control at `x` for decision
/// `stage` (0 for discounted solutions). `control_out` may be null;
/// otherwise it must hold `control_len >= control_dim` doubles.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn pdp_evaluate(
    sol: *const PdpSolution,
    stage: usize,
    x: *const f64,
    x_len: usize,
    value_out: *mut f64,
    control_out: *mut f64,
    control_len: usize,
) -> PdpStatus {
    guard(|| {
        let s = &handle(sol)?.solution;
        let x = StateVector::new(slice_arg(x, x_len)?.to_vec()).map_err(lib_err)?;
        let e = s.evaluate_at_stage(stage, &x).map_err(lib_err)?;
        if !value_out.is_null() {
            *value_out = e.value;
        }
        if !control_out.is_null() {
            let u = e.control.as_slice();
            if control_len < u.len() {
                return Err((PdpStatus::BufferTooSmall, format!("control buffer needs {} entries", u.len())));
            }
            std::ptr::copy_nonoverlapping(u.as_ptr(), control_out, u.len());
        }
        Ok(())
    })
}

/// Value at `x` (stage 0).
///
/// # Safety
/// `x` must hold `x_len` doubles and `value_out` be valid.
#[no_mangle]
pub unsafe extern "C" fn pdp_eval_value(sol: *const PdpSolution, x: *const f64, x_len: usize, value_out: *mut f64) -> PdpStatus {
    if value_out.is_null() {
        set_error("null pointer argument");
        return PdpStatus::NullPointer;
    }
    pdp_evaluate(sol, 0, x, x_len, value_out, std::ptr::null_mut(), 0)
}

/// Minimizing control at `x` (stage 0).
///
/// # Safety
/// `x` must hold `x_len` doubles and `control_out` `control_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdp_eval_policy(
    sol: *const PdpSolution,
    x: *const f64,
    x_len: usize,
    control_out: *mut f64,
    control_len: usize,
) -> PdpStatus {
    if control_out.is_null() {
        set_error("null pointer argument");
        return PdpStatus::NullPointer;
    }
    pdp_evaluate(sol, 0, x, x_len, std::ptr::null_mut(), control_out, control_len)
}

/// Copies the particle weights of `stage` into `out`. For discounted
/// solutions only stage 0 exists; finite-horizon solutions have stages
/// `0..=T`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdp_solution_weights(sol: *const PdpSolution, stage: usize, out: *mut f64, len: usize) -> PdpStatus {
    guard(|| {
        let s = &handle(sol)?.solution;
        let w = if s.is_finite_horizon() {
            s.weights.get(stage)
        } else {
            (stage == 0).then(|| s.final_weights())
        }
        .ok_or_else(|| (PdpStatus::InvalidArgument, format!("no weights for stage {stage}")))?;
        copy_out(&w.values, out, len)
    })
}

/// Copies the particle positions, row-major `particles × state_dim`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdp_solution_particles(sol: *const PdpSolution, out: *mut f64, len: usize) -> PdpStatus {
    guard(|| copy_out(handle(sol)?.solution.cloud.positions(), out, len))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), (PdpStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    if len < src.len() {
        return Err((PdpStatus::BufferTooSmall, format!("buffer needs {} entries", src.len())));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Discounted LQR reference: solves for `X` (n×n), gain `K` (m×n) and
/// offset `q`. Matrices are row-major. `x_out` and `k_out` may be null.
///
/// # Safety
/// Inputs must hold n×n (`f`, `q`, `noise_cov`), n×m (`b`) and m×m (`r`)
/// doubles; non-null outputs n×n, m×n and one double.
#[no_mangle]
pub unsafe extern "C" fn pdp_riccati(
    n: usize,
    m: usize,
    f: *const f64,
    b: *const f64,
    q: *const f64,
    r: *const f64,
    alpha: f64,
    noise_cov: *const f64,
    x_out: *mut f64,
    k_out: *mut f64,
    q_out: *mut f64,
) -> PdpStatus {
    guard(|| {
        if n == 0 || m == 0 {
            return Err((PdpStatus::InvalidArgument, "dimensions must be positive".into()));
        }
        let mat = |p: *const f64, rows: usize, cols: usize| -> Result<DMatrix<f64>, (PdpStatus, String)> {
            Ok(DMatrix::from_row_slice(rows, cols, slice_arg(p, rows * cols)?))
        };
        let sol = solve_discounted_riccati(
            &mat(f, n, n)?,
            &mat(b, n, m)?,
            &mat(q, n, n)?,
            &mat(r, m, m)?,
            alpha,
            &mat(noise_cov, n, n)?,
            1e-13,
            1_000_000,
        )
        .map_err(lib_err)?;
        if !x_out.is_null() {
            for i in 0..n {
                for j in 0..n {
                    *x_out.add(i * n + j) = sol.x[(i, j)];
                }
            }
        }
        if !k_out.is_null() {
            for i in 0..m {
                for j in 0..n {
                    *k_out.add(i * n + j) = sol.gain[(i, j)];
                }
            }
        }
        if !q_out.is_null() {
            *q_out = sol.q;
        }
        Ok(())
    })
}
