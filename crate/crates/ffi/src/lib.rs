//! C interface to the `assimilate` library.
//!
//! All objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns
//! an [`AsmStatus`]; on failure a message is available from
//! [`asm_last_error_message`] on the same thread. Matrices are column-major,
//! one ensemble member per column.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};

use assimilate::filters::{enkf_perturbed_step, esrf_step};
use assimilate::harness::{run_experiment, Experiment, ExperimentConfig, MetricsRecord};
use assimilate::resampling::{effective_sample_size, resample, ResamplingScheme};
use assimilate::rng::RngStream;
use assimilate::{Error, WeightedEnsemble};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    Config = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Resampling scheme selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsmScheme {
    Multinomial = 0,
    Residual = 1,
    Systematic = 2,
}

/// Weighted ensemble of `size` members in dimension `dim`.
pub struct AsmEnsemble(WeightedEnsemble);

/// Validated experiment configuration.
pub struct AsmExperiment(Experiment);

/// Per-step diagnostics of a finished run.
pub struct AsmMetrics(MetricsRecord);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(err: &Error) -> AsmStatus {
    match err {
        Error::DimensionMismatch { .. } => AsmStatus::DimensionMismatch,
        Error::InvalidArgument(_) | Error::InvalidWeights(_) | Error::InfeasibleMarginals(_) => {
            AsmStatus::InvalidArgument
        }
        Error::Config { .. } => AsmStatus::Config,
        Error::Io(_) => AsmStatus::Io,
        _ => AsmStatus::Numerical,
    }
}

struct Failure(AsmStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AsmStatus::NullPointer, format!("null pointer: {what}"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AsmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            AsmStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AsmStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err(Failure(
            AsmStatus::BufferTooSmall,
            format!("output buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(value: T, out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn asm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn asm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an ensemble from `dim * size` column-major values. `weights` may
/// be null for uniform weights, otherwise it holds `size` values summing to 1.
///
/// # Safety
/// `members` must point to `dim * size` doubles, `weights` to `size` doubles
/// or be null, and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_new(
    dim: usize,
    size: usize,
    members: *const f64,
    weights: *const f64,
    out: *mut *mut AsmEnsemble,
) -> AsmStatus {
    guard(|| {
        if dim == 0 || size == 0 {
            return Err(Failure(AsmStatus::InvalidArgument, "ensemble dimension and size must be positive".into()));
        }
        let count = dim
            .checked_mul(size)
            .ok_or_else(|| Failure(AsmStatus::InvalidArgument, "ensemble too large".into()))?;
        let values = slice(members, count, "members")?;
        let x = DMatrix::from_column_slice(dim, size, values);
        let e = if weights.is_null() {
            WeightedEnsemble::uniform(x)?
        } else {
            WeightedEnsemble::new(x, DVector::from_column_slice(slice(weights, size, "weights")?))?
        };
        emit(AsmEnsemble(e), out)
    })
}

/// Releases an ensemble. Null is ignored.
///
/// # Safety
/// `e` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_free(e: *mut AsmEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_dim(e: *const AsmEnsemble) -> usize {
    e.as_ref().map_or(0, |e| e.0.dim())
}

/// Number of members, or 0 for a null handle.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_size(e: *const AsmEnsemble) -> usize {
    e.as_ref().map_or(0, |e| e.0.size())
}

/// Copies all members (`dim * size` values, column-major) into `out`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_members(e: *const AsmEnsemble, out: *mut f64, len: usize) -> AsmStatus {
    guard(|| write_out(handle(e, "ensemble")?.0.members().as_slice(), out, len))
}

/// Copies the `size` weights into `out`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_weights(e: *const AsmEnsemble, out: *mut f64, len: usize) -> AsmStatus {
    guard(|| write_out(handle(e, "ensemble")?.0.weights().as_slice(), out, len))
}

/// Weighted mean, `dim` values.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_mean(e: *const AsmEnsemble, out: *mut f64, len: usize) -> AsmStatus {
    guard(|| write_out(handle(e, "ensemble")?.0.mean().as_slice(), out, len))
}

/// Weighted covariance, `dim * dim` values.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_cov(e: *const AsmEnsemble, out: *mut f64, len: usize) -> AsmStatus {
    guard(|| write_out(handle(e, "ensemble")?.0.cov()?.as_slice(), out, len))
}

/// Effective sample size `1 / Σ w²` written to `out`.
///
/// # Safety
/// `e` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_ess(e: *const AsmEnsemble, out: *mut f64) -> AsmStatus {
    guard(|| {
        let ess = effective_sample_size(handle(e, "ensemble")?.0.weights().as_slice());
        write_out(&[ess], out, 1)
    })
}

/// Resamples to uniform weights. `scheme` takes an [`AsmScheme`] value; the
/// same `seed` gives the same result.
///
/// # Safety
/// `e` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_resample(
    e: *const AsmEnsemble,
    scheme: u32,
    seed: u64,
    out: *mut *mut AsmEnsemble,
) -> AsmStatus {
    guard(|| {
        let scheme = match scheme {
            s if s == AsmScheme::Multinomial as u32 => ResamplingScheme::Multinomial,
            s if s == AsmScheme::Residual as u32 => ResamplingScheme::Residual,
            s if s == AsmScheme::Systematic as u32 => ResamplingScheme::Systematic,
            other => return Err(Failure(AsmStatus::InvalidArgument, format!("unknown resampling scheme {other}"))),
        };
        let mut rng = RngStream::new(seed, "resample").rng();
        let (resampled, _) = resample(scheme, &handle(e, "ensemble")?.0, &mut rng)?;
        emit(AsmEnsemble(resampled), out)
    })
}

struct LinearObservation {
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    y: DVector<f64>,
}

unsafe fn linear_observation(
    dim: usize,
    obs_dim: usize,
    h: *const f64,
    r: *const f64,
    y: *const f64,
) -> Result<LinearObservation, Failure> {
    if obs_dim == 0 {
        return Err(Failure(AsmStatus::InvalidArgument, "observation dimension must be positive".into()));
    }
    Ok(LinearObservation {
        h: DMatrix::from_column_slice(obs_dim, dim, slice(h, obs_dim * dim, "H")?),
        r: DMatrix::from_column_slice(obs_dim, obs_dim, slice(r, obs_dim * obs_dim, "R")?),
        y: DVector::from_column_slice(slice(y, obs_dim, "y")?),
    })
}

/// Deterministic square-root analysis with linear `H` (`obs_dim × dim`),
/// noise covariance `R` and observation `y`, all column-major.
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_esrf_update(
    e: *const AsmEnsemble,
    obs_dim: usize,
    h: *const f64,
    r: *const f64,
    y: *const f64,
    out: *mut *mut AsmEnsemble,
) -> AsmStatus {
    guard(|| {
        let e = &handle(e, "ensemble")?.0;
        let o = linear_observation(e.dim(), obs_dim, h, r, y)?;
        emit(AsmEnsemble(esrf_step(e, &o.h, &o.r, &o.y)?), out)
    })
}

/// Perturbed-observation ensemble Kalman analysis, seeded by `seed`.
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn asm_ensemble_enkf_update(
    e: *const AsmEnsemble,
    obs_dim: usize,
    h: *const f64,
    r: *const f64,
    y: *const f64,
    seed: u64,
    out: *mut *mut AsmEnsemble,
) -> AsmStatus {
    guard(|| {
        let e = &handle(e, "ensemble")?.0;
        let o = linear_observation(e.dim(), obs_dim, h, r, y)?;
        let mut rng = RngStream::new(seed, "enkf").rng();
        emit(AsmEnsemble(enkf_perturbed_step(e, &o.h, &o.r, &o.y, &mut rng)?), out)
    })
}

/// Parses and validates a TOML experiment description.
///
/// # Safety
/// `toml` must be a NUL-terminated UTF-8 string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn asm_experiment_from_toml(toml: *const c_char, out: *mut *mut AsmExperiment) -> AsmStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("config text"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|_| Failure(AsmStatus::Config, "config text is not valid UTF-8".into()))?;
        let ex = ExperimentConfig::from_toml_str(text)?.validate()?;
        emit(AsmExperiment(ex), out)
    })
}

/// Releases an experiment. Null is ignored.
///
/// # Safety
/// `ex` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn asm_experiment_free(ex: *mut AsmExperiment) {
    if !ex.is_null() {
        drop(Box::from_raw(ex));
    }
}

/// Runs the twin experiment. Nothing is written to disk.
///
/// # Safety
/// `ex` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn asm_experiment_run(ex: *const AsmExperiment, out: *mut *mut AsmMetrics) -> AsmStatus {
    guard(|| {
        let output = run_experiment(&handle(ex, "experiment")?.0)?;
        emit(AsmMetrics(output.metrics), out)
    })
}

/// Releases a metrics record. Null is ignored.
///
/// # Safety
/// `m` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn asm_metrics_free(m: *mut AsmMetrics) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of recorded steps, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asm_metrics_n_steps(m: *const AsmMetrics) -> usize {
    m.as_ref().map_or(0, |m| m.0.steps.len())
}

/// Per-step RMSE of the ensemble mean, `n_steps` values.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn asm_metrics_rmse(m: *const AsmMetrics, out: *mut f64, len: usize) -> AsmStatus {
    guard(|| {
        let rmse: Vec<f64> = handle(m, "metrics")?.0.steps.iter().map(|s| s.rmse).collect();
        write_out(&rmse, out, len)
    })
}

/// Time-averaged RMSE of the ensemble mean.
///
/// # Safety
/// `m` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn asm_metrics_mean_rmse(m: *const AsmMetrics, out: *mut f64) -> AsmStatus {
    guard(|| write_out(&[handle(m, "metrics")?.0.mean_rmse()], out, 1))
}

/// Writes the metrics table as CSV. `needed` receives the byte count
/// including the terminating NUL; pass a null `buf` to query it.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes; `needed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn asm_metrics_csv(
    m: *const AsmMetrics,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> AsmStatus {
    guard(|| {
        let csv = handle(m, "metrics")?.0.to_csv();
        if needed.is_null() {
            return Err(null("needed"));
        }
        *needed = csv.len() + 1;
        if buf.is_null() {
            return Ok(());
        }
        if len < csv.len() + 1 {
            return Err(Failure(
                AsmStatus::BufferTooSmall,
                format!("buffer holds {len} bytes, {} needed", csv.len() + 1),
            ));
        }
        ptr::copy_nonoverlapping(csv.as_ptr().cast::<c_char>(), buf, csv.len());
        *buf.add(csv.len()) = 0;
        Ok(())
    })
}
