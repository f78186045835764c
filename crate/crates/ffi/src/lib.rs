//! C ABI for the `trot` solvers.
//!
//! Problems and solutions are opaque handles created and freed by this
//! library. Every fallible call returns a [`TrotStatus`]; on failure a
//! message is available from [`trot_last_error`] on the same thread until the
//! next failing call. Matrices cross the boundary as row-major `double`
//! buffers. Panics never unwind into C; they surface as
//! `TROT_STATUS_PANIC`.
//!
//! The header `include/trot.h` is generated from this file by the build
//! script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trot::qmath;
use trot::solvers::{solve, Solution, SolverConfig};
use trot::transport::{QParams, TransportProblem};
use trot::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrotStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Malformed problem, parameters or options.
    InvalidInput = 2,
    /// The solver gave up; see the message.
    NotConverged = 3,
    /// A numerical failure other than non-convergence.
    Numerical = 4,
    /// A caller-provided buffer is too small.
    BufferTooSmall = 5,
    /// The requested value does not exist for this solution.
    Unavailable = 6,
    /// Internal error. The library state is still valid.
    Panic = 7,
}

/// Opaque transport problem `(r, c, M)`.
pub struct TrotProblem {
    inner: TransportProblem,
}

/// Opaque solution: plan, trace summary and, for `q > 0`, duals.
pub struct TrotSolution {
    inner: Solution,
}

/// Solver options. Obtain defaults from [`trot_solver_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TrotSolverOptions {
    pub max_iters: usize,
    /// Bound on each marginal residual, in l1.
    pub marginal_tol: f64,
    pub objective_tol: f64,
    /// Safeguards of the second-order scaling solver (0 < q < 1).
    pub production_mods: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: TrotStatus, msg: impl Into<String>) -> TrotStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> TrotStatus {
    let status = match &e {
        Error::NotConverged { .. } => TrotStatus::NotConverged,
        e if e.is_input_error() => TrotStatus::InvalidInput,
        _ => TrotStatus::Numerical,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> TrotStatus) -> TrotStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(TrotStatus::Panic, "internal panic"))
}

fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], TrotStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(TrotStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: caller promises `p` points to `len` readable doubles.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

/// Message of the last failing call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn trot_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn trot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `exp_q(x)`. Past the pole for `q > 1` this is `DBL_MAX`.
#[no_mangle]
pub extern "C" fn trot_q_exp(x: f64, q: f64) -> f64 {
    qmath::q_exp(x, q)
}

/// `log_q(x)`, or NaN outside `x > 0`.
#[no_mangle]
pub extern "C" fn trot_q_log(x: f64, q: f64) -> f64 {
    qmath::q_log(x, q).unwrap_or(f64::NAN)
}

/// Builds a problem from marginals `r` (length `n`), `c` (length `m`) and a
/// row-major `n × m` cost matrix. Marginals must be nonnegative and sum to 1.
///
/// # Safety
/// `r`, `c` and `cost` must point to `n`, `m` and `n * m` doubles; `out`
/// must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn trot_problem_new(
    r: *const f64,
    n: usize,
    c: *const f64,
    m: usize,
    cost: *const f64,
    out: *mut *mut TrotProblem,
) -> TrotStatus {
    guard(|| {
        if out.is_null() {
            return fail(TrotStatus::NullPointer, "out is null");
        }
        let Some(nm) = n.checked_mul(m) else {
            return fail(TrotStatus::InvalidInput, "n * m overflows");
        };
        let (r, c, cost) = match (slice(r, n, "r"), slice(c, m, "c"), slice(cost, nm, "cost")) {
            (Ok(r), Ok(c), Ok(k)) => (r, c, k),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        let rows = if m == 0 { vec![Vec::new(); n] } else { cost.chunks(m).map(<[f64]>::to_vec).collect() };
        match TransportProblem::new(r.to_vec(), c.to_vec(), rows) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(TrotProblem { inner: p }));
                TrotStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Parses a problem from JSON `{"r": [...], "c": [...], "M": [[...], ...]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trot_problem_from_json(json: *const c_char, out: *mut *mut TrotProblem) -> TrotStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(TrotStatus::NullPointer, "json and out must not be null");
        }
        let Ok(s) = CStr::from_ptr(json).to_str() else {
            return fail(TrotStatus::InvalidInput, "json is not UTF-8");
        };
        match TransportProblem::from_json(s) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(TrotProblem { inner: p }));
                TrotStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Frees a problem. Null is ignored.
///
/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trot_problem_free(p: *mut TrotProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of rows (length of `r`); 0 for null.
///
/// # Safety
/// `p` must be null or a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn trot_problem_rows(p: *const TrotProblem) -> usize {
    p.as_ref().map_or(0, |p| p.inner.rows())
}

/// Number of columns (length of `c`); 0 for null.
///
/// # Safety
/// `p` must be null or a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn trot_problem_cols(p: *const TrotProblem) -> usize {
    p.as_ref().map_or(0, |p| p.inner.cols())
}

/// Default solver options.
#[no_mangle]
pub extern "C" fn trot_solver_options_default() -> TrotSolverOptions {
    let d = SolverConfig::default();
    TrotSolverOptions {
        max_iters: d.max_outer_iters,
        marginal_tol: d.marginal_tol,
        objective_tol: d.objective_tol,
        production_mods: d.production_mods,
    }
}

/// Solves `problem` at `(q, lambda)`. `options` may be null for defaults.
///
/// A run that stops at the iteration cap still returns `TROT_STATUS_OK` and
/// a solution; check [`trot_solution_converged`].
///
/// # Safety
/// `problem` must be a live handle, `options` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn trot_solve(
    problem: *const TrotProblem,
    q: f64,
    lambda: f64,
    options: *const TrotSolverOptions,
    out: *mut *mut TrotSolution,
) -> TrotStatus {
    guard(|| {
        let Some(problem) = problem.as_ref() else {
            return fail(TrotStatus::NullPointer, "problem is null");
        };
        if out.is_null() {
            return fail(TrotStatus::NullPointer, "out is null");
        }
        let params = match QParams::new(q, lambda) {
            Ok(p) => p,
            Err(e) => return from_error(e),
        };
        let mut cfg = SolverConfig::default();
        if let Some(o) = options.as_ref() {
            cfg.max_outer_iters = o.max_iters;
            cfg.marginal_tol = o.marginal_tol;
            cfg.objective_tol = o.objective_tol;
            cfg.production_mods = o.production_mods;
        }
        match solve(&problem.inner, &params, &cfg) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(TrotSolution { inner: s }));
                TrotStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Frees a solution. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trot_solution_free(s: *mut TrotSolution) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Whether the solver met its stopping rule; false for null.
///
/// # Safety
/// `s` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn trot_solution_converged(s: *const TrotSolution) -> bool {
    s.as_ref().is_some_and(|s| s.inner.trace.converged)
}

/// Iterations performed; 0 for null.
///
/// # Safety
/// `s` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn trot_solution_iterations(s: *const TrotSolution) -> usize {
    s.as_ref().map_or(0, |s| s.inner.trace.iterations)
}

/// Larger of the two l1 marginal residuals; NaN for null.
///
/// # Safety
/// `s` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn trot_solution_residual(s: *const TrotSolution) -> f64 {
    s.as_ref().map_or(f64::NAN, |s| s.inner.plan.max_residual())
}

/// Copies the row-major `n × m` plan into `buf`, which holds `len` doubles.
///
/// # Safety
/// `s` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn trot_solution_plan(s: *const TrotSolution, buf: *mut f64, len: usize) -> TrotStatus {
    guard(|| {
        let Some(s) = s.as_ref() else {
            return fail(TrotStatus::NullPointer, "solution is null");
        };
        let plan = &s.inner.plan.plan;
        if len < plan.len() {
            return fail(TrotStatus::BufferTooSmall, format!("plan needs {} doubles, got {len}", plan.len()));
        }
        if buf.is_null() {
            return fail(TrotStatus::NullPointer, "buf is null");
        }
        for (k, v) in plan.iter().enumerate() {
            *buf.add(k) = *v;
        }
        TrotStatus::Ok
    })
}

/// Copies the recovered duals `α` (`n`) and `β` (`m`), with `α_0 = 0`.
/// `TROT_STATUS_UNAVAILABLE` for the unregularized problem (`q = 0`).
///
/// # Safety
/// `s` must be a live handle; `alpha` and `beta` writable for `n` and `m`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn trot_solution_duals(
    s: *const TrotSolution,
    alpha: *mut f64,
    n: usize,
    beta: *mut f64,
    m: usize,
) -> TrotStatus {
    guard(|| {
        let Some(s) = s.as_ref() else {
            return fail(TrotStatus::NullPointer, "solution is null");
        };
        let Some(d) = &s.inner.duals else {
            return fail(TrotStatus::Unavailable, "no duals for q = 0");
        };
        if n < d.alpha.len() || m < d.beta.len() {
            return fail(
                TrotStatus::BufferTooSmall,
                format!("duals need {} and {} doubles, got {n} and {m}", d.alpha.len(), d.beta.len()),
            );
        }
        if alpha.is_null() || beta.is_null() {
            return fail(TrotStatus::NullPointer, "alpha and beta must not be null");
        }
        for (k, v) in d.alpha.iter().enumerate() {
            *alpha.add(k) = *v;
        }
        for (k, v) in d.beta.iter().enumerate() {
            *beta.add(k) = *v;
        }
        TrotStatus::Ok
    })
}

/// Distance of the plan from the closed-form KKT solution at the recovered
/// duals; NaN when there are no duals or `s` is null.
///
/// # Safety
/// `s` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn trot_solution_kkt_residual(s: *const TrotSolution) -> f64 {
    s.as_ref().and_then(|s| s.inner.duals.as_ref()).map_or(f64::NAN, |d| d.residual)
}
