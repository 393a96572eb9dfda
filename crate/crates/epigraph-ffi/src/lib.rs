//! C interface to the estimators: opaque handles, integer status codes, and
//! a per-thread error message. The generated header lives in
//! `include/epigraph.h`.
//!
//! Conventions, shared by every entry point:
//! - Matrices cross the boundary as dense row-major `double` buffers with
//!   explicit dimensions; counts and estimates are territories x days.
//! - Functions return [`EpiStatus`]; anything but `Ok` leaves a message
//!   retrievable through [`epi_last_error`]. The message lives in
//!   thread-local storage and is valid until the same thread calls back in.
//! - Out-parameters are written only on `Ok`.
//! - Handles are created and released by exactly this library; a handle must
//!   not be used after `free`, and `free` tolerates null.
//! - Panics never unwind across the boundary; they surface as
//!   [`EpiStatus::Panic`].
//!
//! Infectiousness is computed from the counts with the estimators' standard
//! serial interval, a discretized gamma density with mean 6.6 days and
//! standard deviation 3.5 days truncated at 25 days, and estimates start
//! from a 7-day windowed posterior-mean initializer. Callers who need other
//! conventions should use the Rust crate directly.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ndarray::Array2;

use epigraph::baselines::{epiestim_estimate, EpiEstimConfig};
use epigraph::graph::{gram, GraphLaplacian};
use epigraph::joint::{estimate_fix_l, estimate_joint, JointConfig};
use epigraph::model::{
    infectiousness_with_history, CountMatrix, Infectiousness, ReproMatrix, ScaleParams,
    SerialInterval,
};
use epigraph::prox::PdConfig;
use epigraph::qp::solve_laplacian_qp;
use epigraph::Error;

const SERIAL_MEAN_DAYS: f64 = 6.6;
const SERIAL_STD_DAYS: f64 = 3.5;
const SERIAL_TRUNCATION: usize = 25;
const INIT_WINDOW: usize = 7;

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpiStatus {
    /// The call succeeded and out-parameters are valid.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Dimensions or parameter values were rejected; see `epi_last_error`.
    InvalidArgument = 2,
    /// A solver failed to converge or hit a numerical dead end.
    NoConvergence = 3,
    /// An internal invariant broke; the library state is still sound.
    Panic = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("sanitized message has no NUL");
    });
}

fn status_of(err: &Error) -> EpiStatus {
    match err {
        Error::Linalg(_)
        | Error::QpNoConvergence { .. }
        | Error::JointFailure { .. } => EpiStatus::NoConvergence,
        _ => EpiStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> EpiStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Run a body that may panic; report panics as `EpiStatus::Panic`.
fn guarded(body: impl FnOnce() -> EpiStatus) -> EpiStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            EpiStatus::Panic
        }
    }
}

/// Copy a row-major buffer into an owned matrix after null/shape checks.
///
/// # Safety
/// `ptr` must point to `rows * cols` readable doubles.
unsafe fn matrix_from_raw(
    ptr: *const f64,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<Array2<f64>, EpiStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} pointer is null"));
        return Err(EpiStatus::NullPointer);
    }
    if rows == 0 || cols == 0 {
        set_error(&format!("{what} must have nonzero dimensions, got {rows}x{cols}"));
        return Err(EpiStatus::InvalidArgument);
    }
    let len = rows
        .checked_mul(cols)
        .filter(|&n| n <= isize::MAX as usize / std::mem::size_of::<f64>());
    let Some(len) = len else {
        set_error(&format!("{what} dimensions {rows}x{cols} overflow"));
        return Err(EpiStatus::InvalidArgument);
    };
    let data = std::slice::from_raw_parts(ptr, len);
    Ok(Array2::from_shape_vec((rows, cols), data.to_vec()).expect("shape matches length"))
}

fn write_out<T>(out: *mut T, value: T, what: &str) -> EpiStatus {
    if out.is_null() {
        set_error(&format!("{what} out-pointer is null"));
        return EpiStatus::NullPointer;
    }
    unsafe { out.write(value) };
    EpiStatus::Ok
}

/// Counts plus everything derived from them that estimation reuses.
pub struct EpiDataset {
    z: CountMatrix,
    pressure: Infectiousness,
    scales: ScaleParams,
    r_init: ReproMatrix,
}

/// An estimate: reproduction numbers, optionally a learned graph, and the
/// final objective value.
pub struct EpiResult {
    r_hat: ReproMatrix,
    l_hat: Option<GraphLaplacian>,
    objective: f64,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn epi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the calling thread's most recent failure. Empty until the
/// first failure; overwritten by later calls on the same thread.
#[no_mangle]
pub extern "C" fn epi_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Build a dataset handle from daily counts (`n_territories x n_days`,
/// row-major).
///
/// `history`, when non-null, supplies `history_days` days of counts ending
/// the day before the window (same row order) and feeds the infectiousness
/// of the first days; pass null for a cold start. `gamma`, when non-null,
/// gives one known per-territory variance scale; pass null to use a
/// spread-based heuristic.
///
/// # Safety
/// Pointers must cover the stated extents; `out` receives an owned handle
/// to release with [`epi_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn epi_dataset_new(
    counts: *const f64,
    n_territories: usize,
    n_days: usize,
    history: *const f64,
    history_days: usize,
    gamma: *const f64,
    out: *mut *mut EpiDataset,
) -> EpiStatus {
    guarded(|| {
        let raw = match matrix_from_raw(counts, n_territories, n_days, "counts") {
            Ok(m) => m,
            Err(status) => return status,
        };
        let z = match CountMatrix::from_counts(raw) {
            Ok(z) => z,
            Err(e) => return fail(e),
        };
        let hist = if history.is_null() {
            None
        } else {
            match matrix_from_raw(history, n_territories, history_days, "history") {
                Ok(m) => Some(m),
                Err(status) => return status,
            }
        };
        let scales = if gamma.is_null() {
            ScaleParams::heuristic_from_counts(&z)
        } else {
            let g = std::slice::from_raw_parts(gamma, n_territories);
            match ScaleParams::from_gamma(g.to_vec()) {
                Ok(s) => s,
                Err(e) => return fail(e),
            }
        };
        let phi = match SerialInterval::gamma(SERIAL_MEAN_DAYS, SERIAL_STD_DAYS, SERIAL_TRUNCATION)
        {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        let pressure = infectiousness_with_history(&z, hist.as_ref(), &phi);
        let window = match EpiEstimConfig::with_window(INIT_WINDOW) {
            Ok(w) => w,
            Err(e) => return fail(e),
        };
        let r_init = match epiestim_estimate(&z, &pressure, &window) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let handle = Box::new(EpiDataset {
            z,
            pressure,
            scales,
            r_init,
        });
        write_out(out, Box::into_raw(handle), "dataset")
    })
}

/// Release a dataset handle; null is a no-op.
///
/// # Safety
/// `ds` must come from [`epi_dataset_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn epi_dataset_free(ds: *mut EpiDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Borrow a dataset handle for the duration of a call.
///
/// # Safety
/// Must only be called on pointers produced by `epi_dataset_new`.
unsafe fn dataset_ref<'a>(ds: *const EpiDataset) -> Result<&'a EpiDataset, EpiStatus> {
    if ds.is_null() {
        set_error("dataset handle is null");
        return Err(EpiStatus::NullPointer);
    }
    Ok(&*ds)
}

fn pd_config(lambda_t: f64, lambda_s: f64, epsilon: f64, k_max: usize) -> Result<PdConfig, Error> {
    let mut cfg = PdConfig::new(lambda_t, lambda_s)?;
    if epsilon > 0.0 {
        cfg = cfg.with_epsilon(epsilon);
    }
    if k_max > 0 {
        cfg = cfg.with_k_max(k_max);
    }
    Ok(cfg)
}

/// Estimate reproduction numbers with the connectivity graph held fixed.
///
/// `laplacian` (row-major `C x C`, null for no graph) is required whenever
/// `lambda_s > 0` and must satisfy the Laplacian invariants: symmetric,
/// nonpositive off-diagonal, zero row sums, trace equal to `C`. `epsilon`
/// and `k_max` override the solver's stopping controls when positive; pass
/// `0` to keep the defaults.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` receives an owned result
/// handle to release with [`epi_result_free`].
#[no_mangle]
pub unsafe extern "C" fn epi_estimate_fix_l(
    ds: *const EpiDataset,
    lambda_t: f64,
    lambda_s: f64,
    laplacian: *const f64,
    epsilon: f64,
    k_max: usize,
    out: *mut *mut EpiResult,
) -> EpiStatus {
    guarded(|| {
        let ds = match dataset_ref(ds) {
            Ok(d) => d,
            Err(status) => return status,
        };
        let c = ds.z.n_territories();
        let graph = if laplacian.is_null() {
            if lambda_s > 0.0 {
                set_error("lambda_s > 0 needs a laplacian; pass one or set lambda_s to 0");
                return EpiStatus::InvalidArgument;
            }
            None
        } else {
            let raw = match matrix_from_raw(laplacian, c, c, "laplacian") {
                Ok(m) => m,
                Err(status) => return status,
            };
            match GraphLaplacian::new(raw) {
                Ok(l) => Some(l),
                Err(e) => return fail(e),
            }
        };
        let cfg = match pd_config(lambda_t, lambda_s, epsilon, k_max) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let sol = match estimate_fix_l(
            &ds.z,
            &ds.pressure,
            &ds.scales,
            graph.as_ref(),
            &cfg,
            &ds.r_init,
        ) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let handle = Box::new(EpiResult {
            r_hat: sol.repro,
            l_hat: graph,
            objective: sol.objective,
        });
        write_out(out, Box::into_raw(handle), "result")
    })
}

/// Jointly estimate reproduction numbers and the connectivity graph.
///
/// `epsilon`, `k_max`, and `n_max` override the inner stopping controls and
/// the outer alternation count when positive; pass `0` to keep the defaults.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` receives an owned result
/// handle to release with [`epi_result_free`].
#[no_mangle]
pub unsafe extern "C" fn epi_estimate_joint(
    ds: *const EpiDataset,
    lambda_t: f64,
    lambda_s: f64,
    lambda_l: f64,
    epsilon: f64,
    k_max: usize,
    n_max: usize,
    out: *mut *mut EpiResult,
) -> EpiStatus {
    guarded(|| {
        let ds = match dataset_ref(ds) {
            Ok(d) => d,
            Err(status) => return status,
        };
        let mut cfg = match JointConfig::new(lambda_t, lambda_s, lambda_l) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        if epsilon > 0.0 {
            cfg.pd = cfg.pd.with_epsilon(epsilon);
        }
        if k_max > 0 {
            cfg.pd = cfg.pd.with_k_max(k_max);
        }
        if n_max > 0 {
            cfg = match cfg.with_n_max(n_max) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
        }
        let result = match estimate_joint(&ds.z, &ds.pressure, &ds.scales, &cfg, &ds.r_init) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let objective = *result
            .objective_trace
            .last()
            .expect("joint trace is never empty");
        let handle = Box::new(EpiResult {
            r_hat: result.r_hat,
            l_hat: Some(result.l_hat),
            objective,
        });
        write_out(out, Box::into_raw(handle), "result")
    })
}

/// Learn a connectivity graph from reproduction numbers alone
/// (`n_territories x n_days`, row-major) and write the `C x C` Laplacian
/// into `laplacian_out`.
///
/// # Safety
/// `r` must cover `n_territories * n_days` doubles and `laplacian_out`
/// `n_territories * n_territories` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn epi_learn_graph(
    r: *const f64,
    n_territories: usize,
    n_days: usize,
    lambda_s: f64,
    lambda_l: f64,
    laplacian_out: *mut f64,
) -> EpiStatus {
    guarded(|| {
        let raw = match matrix_from_raw(r, n_territories, n_days, "reproduction numbers") {
            Ok(m) => m,
            Err(status) => return status,
        };
        let repro = match ReproMatrix::new(raw) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        if laplacian_out.is_null() {
            set_error("laplacian out-pointer is null");
            return EpiStatus::NullPointer;
        }
        let (l_hat, _) = match solve_laplacian_qp(&gram(&repro), lambda_s, lambda_l, None) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let m = l_hat.matrix();
        let dst = std::slice::from_raw_parts_mut(laplacian_out, n_territories * n_territories);
        dst.copy_from_slice(m.as_slice().expect("laplacian is row-major"));
        EpiStatus::Ok
    })
}

/// Borrow a result handle for the duration of a call.
///
/// # Safety
/// Must only be called on pointers produced by the estimate entry points.
unsafe fn result_ref<'a>(res: *const EpiResult) -> Result<&'a EpiResult, EpiStatus> {
    if res.is_null() {
        set_error("result handle is null");
        return Err(EpiStatus::NullPointer);
    }
    Ok(&*res)
}

/// Dimensions of a result's reproduction-number matrix.
///
/// # Safety
/// `res` must be a live result handle; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_result_shape(
    res: *const EpiResult,
    n_territories: *mut usize,
    n_days: *mut usize,
) -> EpiStatus {
    guarded(|| {
        let res = match result_ref(res) {
            Ok(r) => r,
            Err(status) => return status,
        };
        let (c, t) = res.r_hat.matrix().dim();
        let status = write_out(n_territories, c, "territory count");
        if status != EpiStatus::Ok {
            return status;
        }
        write_out(n_days, t, "day count")
    })
}

/// Copy the estimated reproduction numbers (row-major `C x T`) into `buf`.
///
/// # Safety
/// `res` must be a live result handle and `buf` must cover `buf_len`
/// writable doubles with `buf_len >= C * T`.
#[no_mangle]
pub unsafe extern "C" fn epi_result_repro(
    res: *const EpiResult,
    buf: *mut f64,
    buf_len: usize,
) -> EpiStatus {
    guarded(|| {
        let res = match result_ref(res) {
            Ok(r) => r,
            Err(status) => return status,
        };
        if buf.is_null() {
            set_error("repro buffer is null");
            return EpiStatus::NullPointer;
        }
        let src = res.r_hat.matrix().as_slice().expect("row-major layout");
        if buf_len < src.len() {
            set_error(&format!(
                "repro buffer holds {buf_len} values, need {}",
                src.len()
            ));
            return EpiStatus::InvalidArgument;
        }
        std::slice::from_raw_parts_mut(buf, src.len()).copy_from_slice(src);
        EpiStatus::Ok
    })
}

/// Copy the result's graph Laplacian (row-major `C x C`) into `buf`. Fails
/// with `InvalidArgument` when the estimate carries no graph.
///
/// # Safety
/// `res` must be a live result handle and `buf` must cover `buf_len`
/// writable doubles with `buf_len >= C * C`.
#[no_mangle]
pub unsafe extern "C" fn epi_result_laplacian(
    res: *const EpiResult,
    buf: *mut f64,
    buf_len: usize,
) -> EpiStatus {
    guarded(|| {
        let res = match result_ref(res) {
            Ok(r) => r,
            Err(status) => return status,
        };
        let Some(l) = &res.l_hat else {
            set_error("estimate carries no graph (fix-L without a laplacian)");
            return EpiStatus::InvalidArgument;
        };
        if buf.is_null() {
            set_error("laplacian buffer is null");
            return EpiStatus::NullPointer;
        }
        let src = l.matrix().as_slice().expect("row-major layout");
        if buf_len < src.len() {
            set_error(&format!(
                "laplacian buffer holds {buf_len} values, need {}",
                src.len()
            ));
            return EpiStatus::InvalidArgument;
        }
        std::slice::from_raw_parts_mut(buf, src.len()).copy_from_slice(src);
        EpiStatus::Ok
    })
}

/// Final objective value of the estimate.
///
/// # Safety
/// `res` must be a live result handle; `objective` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_result_objective(
    res: *const EpiResult,
    objective: *mut f64,
) -> EpiStatus {
    guarded(|| {
        let res = match result_ref(res) {
            Ok(r) => r,
            Err(status) => return status,
        };
        write_out(objective, res.objective, "objective")
    })
}

/// Release a result handle; null is a no-op.
///
/// # Safety
/// `res` must come from an estimate entry point and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn epi_result_free(res: *mut EpiResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
