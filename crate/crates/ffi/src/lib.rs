//! C interface to `sparse-dflm`.
//!
//! All objects cross the boundary as opaque handles created by a `*_new`
//! function and released by the matching `*_free`. Fallible calls return an
//! [`SdflmStatus`]; the message of the most recent failure on the calling
//! thread is available from [`sdflm_last_error`].
//!
//! ```c
//! SdflmProblem *prob;
//! SdflmResult *res;
//! sdflm_problem_builtin("broyden", 100, &prob);
//! sdflm_solve(prob, NULL, &res);
//! printf("%g after %zu evaluations\n", sdflm_result_final_f(res), sdflm_result_fevals(res));
//! sdflm_result_free(res);
//! sdflm_problem_free(prob);
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use sparse_dflm::{Error, PPolicy, Problem, Registry, RunRecord, SolverConfig, StopReason, Vector};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdflmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NonFinite = 3,
    Infeasible = 4,
    Factorization = 5,
    UnknownProblem = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Mirror of the solver's stop reasons.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdflmStopReason {
    Stationary = 0,
    SmallStep = 1,
    SmallDecrease = 2,
    MaxFevals = 3,
    Error = 4,
}

impl From<StopReason> for SdflmStopReason {
    fn from(r: StopReason) -> Self {
        match r {
            StopReason::Stationary => SdflmStopReason::Stationary,
            StopReason::SmallStep => SdflmStopReason::SmallStep,
            StopReason::SmallDecrease => SdflmStopReason::SmallDecrease,
            StopReason::MaxFevals => SdflmStopReason::MaxFevals,
            StopReason::Error => SdflmStopReason::Error,
        }
    }
}

/// Residual callback: write `F(x)` (length `m`) into `out` and return 0.
/// A non-zero return marks the evaluation as failed.
pub type SdflmResidualFn =
    Option<unsafe extern "C" fn(user: *mut c_void, x: *const f64, n: usize, out: *mut f64, m: usize) -> c_int>;

/// Solver configuration.
pub struct SdflmConfig {
    inner: SolverConfig,
}

/// A least-squares problem, built in or backed by a callback.
pub struct SdflmProblem {
    inner: Arc<Problem>,
}

/// Outcome of one solver run.
pub struct SdflmResult {
    record: RunRecord,
    error: Option<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> SdflmStatus {
    match e {
        Error::NonFiniteInterpolation { .. } | Error::NonFiniteResidual(_) => SdflmStatus::NonFinite,
        Error::Infeasible { .. } => SdflmStatus::Infeasible,
        Error::Factorization(_) => SdflmStatus::Factorization,
        Error::UnknownProblem(_) => SdflmStatus::UnknownProblem,
        Error::Io { .. } | Error::Format { .. } => SdflmStatus::Io,
        _ => SdflmStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> SdflmStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

/// Runs `body`, turning a panic into [`SdflmStatus::Panic`].
fn guard(body: impl FnOnce() -> SdflmStatus) -> SdflmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SdflmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SdflmStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(SdflmStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        SdflmStatus::InvalidArgument
    })
}

fn null_arg(what: &str) -> SdflmStatus {
    set_error(format!("{what} is null"));
    SdflmStatus::NullPointer
}

/// Library version as a static NUL-terminated string.
#[unsafe(no_mangle)]
pub extern "C" fn sdflm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[unsafe(no_mangle)]
pub extern "C" fn sdflm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from a `*_to_json` call and not have been freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration for problems of dimension `n`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_config_new(n: usize, out: *mut *mut SdflmConfig) -> SdflmStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        if n == 0 {
            set_error("dimension must be positive");
            return SdflmStatus::InvalidArgument;
        }
        let cfg = Box::new(SdflmConfig {
            inner: SolverConfig::for_dimension(n),
        });
        *out = Box::into_raw(cfg);
        SdflmStatus::Ok
    })
}

/// Sets a field by dotted name, e.g. `("eta0", "1e-2")` or
/// `("recovery.optimality_tol", "1e-9")`. `value` is JSON; bare words are
/// read as strings.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_config_set(
    cfg: *mut SdflmConfig,
    key: *const c_char,
    value: *const c_char,
) -> SdflmStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return null_arg("cfg");
        };
        let key = match str_arg(key, "key") {
            Ok(k) => k,
            Err(s) => return s,
        };
        let value = match str_arg(value, "value") {
            Ok(v) => v,
            Err(s) => return s,
        };
        match cfg.inner.set_field(key, value) {
            Ok(()) => SdflmStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Uses `p` probes in every model build.
///
/// # Safety
/// `cfg` must be a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_config_set_fixed_p(cfg: *mut SdflmConfig, p: usize) -> SdflmStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return null_arg("cfg");
        };
        if p == 0 {
            set_error("p must be positive");
            return SdflmStatus::InvalidArgument;
        }
        cfg.inner.p_policy = PPolicy::Fixed(p);
        SdflmStatus::Ok
    })
}

/// Seed of the sensing-matrix stream.
///
/// # Safety
/// `cfg` must be a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_config_set_seed(cfg: *mut SdflmConfig, seed: u64) -> SdflmStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return null_arg("cfg");
        };
        cfg.inner.seed = seed;
        SdflmStatus::Ok
    })
}

/// The configuration as a JSON string; free with [`sdflm_string_free`].
/// Returns NULL if `cfg` is NULL.
///
/// # Safety
/// `cfg` must be NULL or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_config_to_json(cfg: *const SdflmConfig) -> *mut c_char {
    let Some(cfg) = cfg.as_ref() else {
        null_arg("cfg");
        return ptr::null_mut();
    };
    to_json(&cfg.inner)
}

/// # Safety
/// `cfg` must be NULL or a handle from [`sdflm_config_new`] not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_config_free(cfg: *mut SdflmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

struct Callback {
    f: unsafe extern "C" fn(*mut c_void, *const f64, usize, *mut f64, usize) -> c_int,
    user: *mut c_void,
}

// The solver only evaluates a callback problem from the calling thread
// (the problem is marked not thread-safe).
unsafe impl Send for Callback {}
unsafe impl Sync for Callback {}

impl Callback {
    fn call(&self, x: &Vector, m: usize) -> Vector {
        let mut out = Vector::from_element(m, f64::NAN);
        let rc = unsafe { (self.f)(self.user, x.as_ptr(), x.len(), out.as_mut_ptr(), m) };
        if rc != 0 {
            out.fill(f64::NAN);
        }
        out
    }
}

/// Problem with `m` residuals in `n` unknowns evaluated by `residual`,
/// starting from `x0` (length `n`, copied). `user` is passed through
/// untouched; it must outlive the problem handle.
///
/// # Safety
/// `name` must be a NUL-terminated string, `x0` must point to `n` doubles and
/// `out` to writable storage.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_problem_new(
    name: *const c_char,
    n: usize,
    m: usize,
    x0: *const f64,
    residual: SdflmResidualFn,
    user: *mut c_void,
    out: *mut *mut SdflmProblem,
) -> SdflmStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let name = match str_arg(name, "name") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let Some(f) = residual else {
            return null_arg("residual");
        };
        if x0.is_null() {
            return null_arg("x0");
        }
        if n == 0 || m == 0 {
            set_error("dimensions must be positive");
            return SdflmStatus::InvalidArgument;
        }
        let start = Vector::from_column_slice(std::slice::from_raw_parts(x0, n));
        let cb = Callback { f, user };
        let problem = Problem::new(name, m, start, move |x| cb.call(x, m)).with_thread_safety(false);
        if let Err(e) = problem.validate() {
            return fail(e);
        }
        *out = Box::into_raw(Box::new(SdflmProblem {
            inner: Arc::new(problem),
        }));
        SdflmStatus::Ok
    })
}

/// A built-in problem family (`broyden`, `valley`, `freudenstein`, `trig`)
/// at dimension `n`.
///
/// # Safety
/// `family` must be a NUL-terminated string and `out` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_problem_builtin(
    family: *const c_char,
    n: usize,
    out: *mut *mut SdflmProblem,
) -> SdflmStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let family = match str_arg(family, "family") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match Registry::new().resolve(family, Some(n)) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(SdflmProblem { inner: p }));
                SdflmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of unknowns, or 0 for NULL.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_problem_n(problem: *const SdflmProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.n)
}

/// Number of residuals, or 0 for NULL.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_problem_m(problem: *const SdflmProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.m)
}

/// # Safety
/// `problem` must be NULL or a handle not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_problem_free(problem: *mut SdflmProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

unsafe fn run_solver(
    problem: *const SdflmProblem,
    cfg: *const SdflmConfig,
    out: *mut *mut SdflmResult,
    solver: fn(&Problem, &SolverConfig) -> sparse_dflm::Result<RunRecord>,
) -> SdflmStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let Some(problem) = problem.as_ref() else {
            return null_arg("problem");
        };
        let cfg = match cfg.as_ref() {
            Some(c) => c.inner.clone(),
            None => SolverConfig::for_dimension_of(&problem.inner),
        };
        match solver(&problem.inner, &cfg) {
            Ok(record) => {
                let error = record
                    .error
                    .as_ref()
                    .map(|m| CString::new(m.replace('\0', " ")).expect("nul bytes removed"));
                *out = Box::into_raw(Box::new(SdflmResult { record, error }));
                SdflmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs the sparse derivative-free solver. `cfg` may be NULL for the
/// defaults of the problem's dimension. An evaluation failure during the run
/// is not an error of this call: the result then reports
/// `SDFLM_STOP_REASON_ERROR` and [`sdflm_result_error`] explains it.
///
/// # Safety
/// `problem` must be a live handle, `cfg` NULL or a live handle and `out`
/// writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_solve(
    problem: *const SdflmProblem,
    cfg: *const SdflmConfig,
    out: *mut *mut SdflmResult,
) -> SdflmStatus {
    run_solver(problem, cfg, out, sparse_dflm::solve)
}

/// Same loop with forward-difference Jacobians.
///
/// # Safety
/// As for [`sdflm_solve`].
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_solve_fd(
    problem: *const SdflmProblem,
    cfg: *const SdflmConfig,
    out: *mut *mut SdflmResult,
) -> SdflmStatus {
    run_solver(problem, cfg, out, sparse_dflm::solve_fd_baseline)
}

/// `½‖F‖²` at the returned point; NaN for NULL.
///
/// # Safety
/// `res` must be NULL or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_result_final_f(res: *const SdflmResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.record.final_f)
}

/// # Safety
/// `res` must be NULL or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_result_fevals(res: *const SdflmResult) -> usize {
    res.as_ref().map_or(0, |r| r.record.fevals)
}

/// # Safety
/// `res` must be NULL or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_result_iterations(res: *const SdflmResult) -> usize {
    res.as_ref().map_or(0, |r| r.record.iterations)
}

/// Stop reason; `SDFLM_STOP_REASON_ERROR` for NULL.
///
/// # Safety
/// `res` must be NULL or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_result_stop_reason(res: *const SdflmResult) -> SdflmStopReason {
    res.as_ref()
        .map_or(SdflmStopReason::Error, |r| r.record.stop_reason.into())
}

/// Runtime error message of a failed run, or NULL. Owned by the result.
///
/// # Safety
/// `res` must be NULL or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_result_error(res: *const SdflmResult) -> *const c_char {
    res.as_ref()
        .and_then(|r| r.error.as_ref())
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Copies the final point into `buf` (capacity `len`). Fails with
/// `SDFLM_STATUS_BUFFER_TOO_SMALL` if `len` is less than the dimension.
///
/// # Safety
/// `res` must be a live handle and `buf` point to `len` writable doubles.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_result_x(res: *const SdflmResult, buf: *mut f64, len: usize) -> SdflmStatus {
    guard(|| {
        let Some(res) = res.as_ref() else {
            return null_arg("res");
        };
        if buf.is_null() {
            return null_arg("buf");
        }
        let x = &res.record.x_final;
        if len < x.len() {
            set_error(format!("buffer holds {len} values, need {}", x.len()));
            return SdflmStatus::BufferTooSmall;
        }
        std::slice::from_raw_parts_mut(buf, x.len()).copy_from_slice(x);
        SdflmStatus::Ok
    })
}

/// Full run record (history and trace included) as JSON; free with
/// [`sdflm_string_free`]. NULL if `res` is NULL.
///
/// # Safety
/// `res` must be NULL or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_result_to_json(res: *const SdflmResult) -> *mut c_char {
    let Some(res) = res.as_ref() else {
        null_arg("res");
        return ptr::null_mut();
    };
    to_json(&res.record)
}

/// # Safety
/// `res` must be NULL or a handle not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn sdflm_result_free(res: *mut SdflmResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> *mut c_char {
    match serde_json::to_string(v) {
        Ok(s) => CString::new(s).map_or(ptr::null_mut(), CString::into_raw),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Infeasible { row: 1 }), SdflmStatus::Infeasible);
        assert_eq!(
            status_of(&Error::UnknownProblem("x".into())),
            SdflmStatus::UnknownProblem
        );
        assert_eq!(status_of(&Error::NonFiniteResidual("x".into())), SdflmStatus::NonFinite);
        assert_eq!(
            status_of(&Error::SparsityTooHigh { two_s: 4, n: 3 }),
            SdflmStatus::InvalidArgument
        );
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), SdflmStatus::Panic);
        let msg = unsafe { CStr::from_ptr(sdflm_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }

    #[test]
    fn version_is_terminated() {
        let v = unsafe { CStr::from_ptr(sdflm_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
