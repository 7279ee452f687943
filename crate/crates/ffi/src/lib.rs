//! C interface to `saltfim`.
//!
//! Matrices are passed as row-major `double` arrays. Every function returns a
//! [`SaltfimStatus`]; on failure the message is available from
//! [`saltfim_last_error`] on the calling thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::{DMatrix, DVector, RowDVector};
use saltfim::experiment::{write_run, Experiment, ExperimentConfig, RunResult};
use saltfim::information::metrics::info_metrics;
use saltfim::sensitivity::propagate::PropagationMode;
use saltfim::sensitivity::saltation::{saltation_matrix, JacobianBundle};
use saltfim::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaltfimStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
}

/// Scalar summary of a Fisher information matrix.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SaltfimMetrics {
    pub rank: usize,
    pub lambda_min_nonzero: f64,
    pub sigma: f64,
    pub logdet_regularized: f64,
    pub trace: f64,
    pub rank_threshold: f64,
}

/// Opaque experiment handle.
pub struct SaltfimExperiment {
    inner: Experiment,
}

/// Opaque run result handle.
pub struct SaltfimRun {
    experiment: Experiment,
    result: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> SaltfimStatus {
    match e {
        Error::Io(_) => SaltfimStatus::Io,
        e if e.is_validation() => SaltfimStatus::Validation,
        _ => SaltfimStatus::Numerical,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard<F>(f: F) -> SaltfimStatus
where
    F: FnOnce() -> Result<(), Fail>,
{
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SaltfimStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SaltfimStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SaltfimStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail::Lib(Error::InvalidArgument(format!("{what} is not UTF-8: {e}"))))
}

fn to_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Fail::Lib(Error::InvalidArgument(e.to_string())))
}

/// Message of the last failed call on this thread, or NULL. Owned by the library.
#[no_mangle]
pub extern "C" fn saltfim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn saltfim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Saltation matrix for a parameter-free guard and reset.
///
/// `dx_g` has `n` entries, `dx_r` is `n × n`, `dt_r`, `f_pre` and `f_post` have `n`
/// entries (`dt_r` may be NULL for a time-invariant reset). `out` receives `n × n`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn saltfim_saltation_matrix(
    n: usize,
    dx_g: *const f64,
    dt_g: f64,
    dx_r: *const f64,
    dt_r: *const f64,
    f_pre: *const f64,
    f_post: *const f64,
    floor: f64,
    out: *mut f64,
) -> SaltfimStatus {
    guard(|| {
        if n == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()).into());
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let mut b = JacobianBundle::state_only(
            RowDVector::from_row_slice(slice(dx_g, n, "dx_g")?),
            DMatrix::from_row_slice(n, n, slice(dx_r, n * n, "dx_r")?),
            0,
        );
        b.dt_g = dt_g;
        if !dt_r.is_null() {
            b.dt_r = DVector::from_column_slice(slice(dt_r, n, "dt_r")?);
        }
        b.validate()?;
        let fp = DVector::from_column_slice(slice(f_pre, n, "f_pre")?);
        let fq = DVector::from_column_slice(slice(f_post, n, "f_post")?);
        let xi = saltation_matrix(&b, &fp, &fq, floor)?;
        let dst = std::slice::from_raw_parts_mut(out, n * n);
        for i in 0..n {
            for j in 0..n {
                dst[i * n + j] = xi[(i, j)];
            }
        }
        Ok(())
    })
}

/// Rank, σ, regularized log-determinant and trace of a symmetric `p × p` matrix.
///
/// # Safety
/// `f` must reference `p * p` doubles and `out` a writable `SaltfimMetrics`.
#[no_mangle]
pub unsafe extern "C" fn saltfim_info_metrics(
    p: usize,
    f: *const f64,
    epsilon: f64,
    out: *mut SaltfimMetrics,
) -> SaltfimStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if p == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be positive".into()).into());
        }
        let m = DMatrix::from_row_slice(p, p, slice(f, p * p, "f")?);
        let r = info_metrics(&m, epsilon)?;
        *out = SaltfimMetrics {
            rank: r.rank,
            lambda_min_nonzero: r.lambda_min_nonzero,
            sigma: r.sigma,
            logdet_regularized: r.logdet_regularized,
            trace: r.trace,
            rank_threshold: r.rank_threshold,
        };
        Ok(())
    })
}

/// Build an experiment from a JSON config. Relative `emit` paths resolve against the working directory.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn saltfim_experiment_from_json(
    json: *const c_char,
    out: *mut *mut SaltfimExperiment,
) -> SaltfimStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::from_json(str_arg(json, "json")?)?;
        let exp = Experiment::new(cfg)?;
        *out = Box::into_raw(Box::new(SaltfimExperiment { inner: exp }));
        Ok(())
    })
}

/// Load an experiment from a config file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn saltfim_experiment_load(
    path: *const c_char,
    out: *mut *mut SaltfimExperiment,
) -> SaltfimStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let exp = Experiment::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(SaltfimExperiment { inner: exp }));
        Ok(())
    })
}

/// # Safety
/// `exp` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn saltfim_experiment_free(exp: *mut SaltfimExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Number of parameters of the experiment's model.
///
/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn saltfim_experiment_param_count(exp: *const SaltfimExperiment) -> usize {
    exp.as_ref().map_or(0, |e| e.inner.model.theta.len())
}

/// Simulate and analyze. `use_seed = false` keeps the configured Monte Carlo seed.
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn saltfim_experiment_run(
    exp: *const SaltfimExperiment,
    use_seed: bool,
    seed: u64,
    out: *mut *mut SaltfimRun,
) -> SaltfimStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let exp = exp.as_ref().ok_or(Fail::Null("exp"))?;
        let result = exp.inner.run(use_seed.then_some(seed))?;
        *out = Box::into_raw(Box::new(SaltfimRun { experiment: exp.inner.clone(), result }));
        Ok(())
    })
}

/// Comparison report for a comma-separated list of propagation modes, as JSON.
///
/// # Safety
/// `exp` must be a live handle, `modes` NUL-terminated, `out` writable.
/// The string must be released with [`saltfim_string_free`].
#[no_mangle]
pub unsafe extern "C" fn saltfim_experiment_compare_json(
    exp: *const SaltfimExperiment,
    modes: *const c_char,
    out: *mut *mut c_char,
) -> SaltfimStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let exp = exp.as_ref().ok_or(Fail::Null("exp"))?;
        let modes = str_arg(modes, "modes")?
            .split(',')
            .map(|m| m.trim().parse::<PropagationMode>())
            .collect::<Result<Vec<_>, _>>()?;
        let report = exp.inner.compare(&modes)?;
        let text = serde_json::to_string_pretty(&report).map_err(|e| Fail::Lib(Error::InvalidArgument(e.to_string())))?;
        *out = to_c_string(text)?;
        Ok(())
    })
}

/// Run report as JSON. Release with [`saltfim_string_free`].
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn saltfim_run_report_json(run: *const SaltfimRun, out: *mut *mut c_char) -> SaltfimStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let run = run.as_ref().ok_or(Fail::Null("run"))?;
        let text = serde_json::to_string_pretty(&run.result.report)
            .map_err(|e| Fail::Lib(Error::InvalidArgument(e.to_string())))?;
        *out = to_c_string(text)?;
        Ok(())
    })
}

/// Information matrix of analysis `index` (in configured mode order), row-major `p × p`.
///
/// # Safety
/// `run` must be a live handle; `out` must hold `p * p` doubles.
#[no_mangle]
pub unsafe extern "C" fn saltfim_run_fim(run: *const SaltfimRun, index: usize, p: usize, out: *mut f64) -> SaltfimStatus {
    guard(|| {
        let run = run.as_ref().ok_or(Fail::Null("run"))?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let info = run.result.report.information.get(index).ok_or_else(|| {
            Fail::Lib(Error::InvalidArgument(format!(
                "analysis index {index} out of range ({} available)",
                run.result.report.information.len()
            )))
        })?;
        let q = info.fim.nrows();
        if q != p {
            return Err(Error::ShapeMismatch { context: "fim output", expected: q.to_string(), actual: p.to_string() }.into());
        }
        let dst = std::slice::from_raw_parts_mut(out, p * p);
        for i in 0..p {
            for j in 0..p {
                dst[i * p + j] = info.fim[(i, j)];
            }
        }
        Ok(())
    })
}

/// Write the CSV and JSON artifacts of a run into `dir`.
///
/// # Safety
/// `run` must be a live handle and `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn saltfim_run_write(run: *const SaltfimRun, dir: *const c_char) -> SaltfimStatus {
    guard(|| {
        let run = run.as_ref().ok_or(Fail::Null("run"))?;
        write_run(Path::new(str_arg(dir, "dir")?), &run.experiment, &run.result)?;
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn saltfim_run_free(run: *mut SaltfimRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `s` must be a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn saltfim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
