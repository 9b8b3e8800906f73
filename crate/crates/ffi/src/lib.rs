//! C ABI over `isingnet`.
//!
//! Models and constraint sets are opaque handles created by `*_new`/`*_fit`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`IsingnetStatus`]; on failure a description is available from
//! [`isingnet_last_error`] on the same thread.
//!
//! Matrices are row-major `double` arrays of length `d * d`. Sample buffers
//! are row-major `uint8_t` arrays of length `n * d` holding 0 or 1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use isingnet::dg::{fit_dg, sample_dg, DgModel};
use isingnet::entropy::{dg_entropy_mc, ising_entropy_exact_with_cap};
use isingnet::fit::{fit_ml, TrainConfig};
use isingnet::gibbs::{gibbs_sample, GibbsConfig};
use isingnet::hazard::{build_constraints, Coordinates, HazardScenario, Site};
use isingnet::model::{constraints_to_second_moments, ensure_feasible, enumerate_with_cap, IsingModel, MomentConstraints};
use isingnet::network::{ipf_adjust, IpfOptions};
use isingnet::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsingnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Infeasible = 4,
    Numerical = 5,
    CapExceeded = 6,
    BufferTooSmall = 7,
    Io = 8,
    Internal = 9,
}

/// Moment constraints: failure probabilities and their correlation matrix.
pub struct IsingnetConstraints(MomentConstraints);

/// Fitted pairwise maximum-entropy model.
pub struct IsingnetIsing(IsingModel);

/// Fitted dichotomized Gaussian model.
pub struct IsingnetDg(DgModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(e: &Error) -> IsingnetStatus {
    match e {
        Error::DimensionMismatch { .. } => IsingnetStatus::DimensionMismatch,
        Error::Infeasible(_) | Error::LatentCorrelationInfeasible { .. } | Error::InconsistentMarginals { .. } => {
            IsingnetStatus::Infeasible
        }
        Error::Numerical { .. } | Error::Factorization(_) => IsingnetStatus::Numerical,
        Error::EnumerationCap { .. } => IsingnetStatus::CapExceeded,
        Error::Io { .. } => IsingnetStatus::Io,
        _ => IsingnetStatus::InvalidArgument,
    }
}

struct Fail(IsingnetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type FfiResult = std::result::Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> IsingnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            IsingnetStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IsingnetStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(IsingnetStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(IsingnetStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn check_len(have: usize, need: usize) -> FfiResult {
    if have < need {
        return Err(Fail(
            IsingnetStatus::BufferTooSmall,
            format!("buffer holds {have} elements, {need} needed"),
        ));
    }
    Ok(())
}

fn square(d: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, data)
}

fn copy_matrix(m: &DMatrix<f64>, out: &mut [f64]) {
    let d = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..d {
            out[i * d + j] = m[(i, j)];
        }
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into the library on this
/// thread.
#[no_mangle]
pub extern "C" fn isingnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn isingnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Constraints from `d` failure probabilities and a `d * d` correlation matrix.
/// Pairs outside their attainable range give `ISINGNET_STATUS_INFEASIBLE`.
///
/// # Safety
/// `means` must point to `d` doubles, `corr` to `d * d` doubles and `out` to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn isingnet_constraints_new(
    d: usize,
    means: *const f64,
    corr: *const f64,
    out: *mut *mut IsingnetConstraints,
) -> IsingnetStatus {
    guard(|| {
        let means = slice(means, d, "means")?.to_vec();
        let corr = slice(corr, d * d, "corr")?;
        let c = MomentConstraints::new(means, square(d, corr))?;
        ensure_feasible(&c)?;
        put(out, IsingnetConstraints(c))
    })
}

/// Constraints for `n` planar sites (kilometres) under a scenario with the
/// given magnitude and epicentre; remaining scenario parameters take their
/// defaults.
///
/// # Safety
/// `x_km` and `y_km` must point to `n` doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn isingnet_constraints_from_hazard(
    n: usize,
    x_km: *const f64,
    y_km: *const f64,
    magnitude: f64,
    epicenter_x_km: f64,
    epicenter_y_km: f64,
    out: *mut *mut IsingnetConstraints,
) -> IsingnetStatus {
    guard(|| {
        let xs = slice(x_km, n, "x_km")?;
        let ys = slice(y_km, n, "y_km")?;
        let sites: Vec<Site> = (0..n).map(|k| Site::planar(format!("s{k}"), xs[k], ys[k])).collect();
        let scenario = HazardScenario::new(
            magnitude,
            Coordinates::Planar {
                x_km: epicenter_x_km,
                y_km: epicenter_y_km,
            },
        );
        scenario.validate()?;
        put(out, IsingnetConstraints(build_constraints(&sites, &scenario)?))
    })
}

/// Reads a constraints directory written by the command-line tool.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn isingnet_constraints_read(
    dir: *const c_char,
    out: *mut *mut IsingnetConstraints,
) -> IsingnetStatus {
    guard(|| {
        let dir = c_str(dir, "dir")?;
        put(out, IsingnetConstraints(isingnet::io::read_constraints(Path::new(dir))?))
    })
}

/// # Safety
/// `c` must be a live handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn isingnet_constraints_write(c: *const IsingnetConstraints, dir: *const c_char) -> IsingnetStatus {
    guard(|| {
        let c = handle(c, "constraints")?;
        let dir = c_str(dir, "dir")?;
        isingnet::io::write_constraints(Path::new(dir), &c.0, serde_json::Value::Null)?;
        Ok(())
    })
}

/// Dimension of a constraint set, or 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn isingnet_constraints_dim(c: *const IsingnetConstraints) -> usize {
    c.as_ref().map_or(0, |c| c.0.dimension())
}

/// Copies means (`d`) and correlations (`d * d`) out; either buffer may be null.
///
/// # Safety
/// Non-null buffers must hold at least the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn isingnet_constraints_get(
    c: *const IsingnetConstraints,
    means: *mut f64,
    means_len: usize,
    corr: *mut f64,
    corr_len: usize,
) -> IsingnetStatus {
    guard(|| {
        let c = handle(c, "constraints")?;
        let d = c.0.dimension();
        if !means.is_null() {
            check_len(means_len, d)?;
            slice_mut(means, d, "means")?.copy_from_slice(c.0.means());
        }
        if !corr.is_null() {
            check_len(corr_len, d * d)?;
            copy_matrix(c.0.correlations(), slice_mut(corr, d * d, "corr")?);
        }
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn isingnet_constraints_free(c: *mut IsingnetConstraints) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Ising model from a `d * d` coupling matrix.
///
/// # Safety
/// `coupling` must point to `d * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn isingnet_ising_new(d: usize, coupling: *const f64, out: *mut *mut IsingnetIsing) -> IsingnetStatus {
    guard(|| {
        let j = slice(coupling, d * d, "coupling")?;
        put(out, IsingnetIsing(IsingModel::new(square(d, j))?))
    })
}

/// Maximum-likelihood fit. `config_json` may be null for defaults or a JSON
/// training configuration; `converged` may be null.
///
/// # Safety
/// `c` must be a live handle, `config_json` null or NUL-terminated, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn isingnet_ising_fit_ml(
    c: *const IsingnetConstraints,
    config_json: *const c_char,
    out: *mut *mut IsingnetIsing,
    converged: *mut bool,
) -> IsingnetStatus {
    guard(|| {
        let c = handle(c, "constraints")?;
        let cfg: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?).map_err(Error::from)?
        };
        let report = fit_ml(&constraints_to_second_moments(&c.0)?, &cfg)?;
        if !converged.is_null() {
            *converged = report.converged;
        }
        put(out, IsingnetIsing(report.final_model))
    })
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn isingnet_ising_dim(m: *const IsingnetIsing) -> usize {
    m.as_ref().map_or(0, |m| m.0.dim())
}

/// # Safety
/// `out` must hold `len >= d * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn isingnet_ising_coupling(m: *const IsingnetIsing, out: *mut f64, len: usize) -> IsingnetStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let d = m.0.dim();
        check_len(len, d * d)?;
        copy_matrix(m.0.coupling(), slice_mut(out, d * d, "out")?);
        Ok(())
    })
}

/// Exact second-moment matrix `E[x xᵀ]` by enumeration; refuses `d > cap`.
///
/// # Safety
/// `out` must hold `len >= d * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn isingnet_ising_moments_exact(
    m: *const IsingnetIsing,
    cap: usize,
    out: *mut f64,
    len: usize,
) -> IsingnetStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let d = m.0.dim();
        check_len(len, d * d)?;
        let e = enumerate_with_cap(&m.0, cap)?;
        copy_matrix(e.moments().matrix(), slice_mut(out, d * d, "out")?);
        Ok(())
    })
}

/// `n` Gibbs samples after `burn_in` sweeps.
///
/// # Safety
/// `out` must hold `len >= n * d` bytes.
#[no_mangle]
pub unsafe extern "C" fn isingnet_ising_sample(
    m: *const IsingnetIsing,
    n: usize,
    burn_in: usize,
    seed: u64,
    out: *mut u8,
    len: usize,
) -> IsingnetStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let need = n * m.0.dim();
        check_len(len, need)?;
        let cfg = GibbsConfig {
            n_samples: n,
            burn_in,
            seed,
            ..Default::default()
        };
        let s = gibbs_sample(&m.0, &cfg)?;
        slice_mut(out, need, "out")?.copy_from_slice(s.as_flat());
        Ok(())
    })
}

/// Exact entropy in nats; refuses `d > cap`.
///
/// # Safety
/// `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn isingnet_ising_entropy_exact(m: *const IsingnetIsing, cap: usize, value: *mut f64) -> IsingnetStatus {
    guard(|| {
        let m = handle(m, "model")?;
        if value.is_null() {
            return Err(null("value"));
        }
        *value = ising_entropy_exact_with_cap(&m.0, cap)?.value;
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn isingnet_ising_free(m: *mut IsingnetIsing) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `c` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn isingnet_dg_fit(c: *const IsingnetConstraints, out: *mut *mut IsingnetDg) -> IsingnetStatus {
    guard(|| {
        let c = handle(c, "constraints")?;
        put(out, IsingnetDg(fit_dg(&c.0)?))
    })
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn isingnet_dg_dim(m: *const IsingnetDg) -> usize {
    m.as_ref().map_or(0, |m| m.0.dim())
}

/// Thresholds (`d`) and latent correlation (`d * d`); either buffer may be null.
///
/// # Safety
/// Non-null buffers must hold at least the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn isingnet_dg_params(
    m: *const IsingnetDg,
    gamma: *mut f64,
    gamma_len: usize,
    latent: *mut f64,
    latent_len: usize,
) -> IsingnetStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let d = m.0.dim();
        if !gamma.is_null() {
            check_len(gamma_len, d)?;
            slice_mut(gamma, d, "gamma")?.copy_from_slice(m.0.gamma());
        }
        if !latent.is_null() {
            check_len(latent_len, d * d)?;
            copy_matrix(m.0.latent_corr(), slice_mut(latent, d * d, "latent")?);
        }
        Ok(())
    })
}

/// `n` independent draws.
///
/// # Safety
/// `out` must hold `len >= n * d` bytes.
#[no_mangle]
pub unsafe extern "C" fn isingnet_dg_sample(m: *const IsingnetDg, n: usize, seed: u64, out: *mut u8, len: usize) -> IsingnetStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let need = n * m.0.dim();
        check_len(len, need)?;
        let s = sample_dg(&m.0, n, seed);
        slice_mut(out, need, "out")?.copy_from_slice(s.as_flat());
        Ok(())
    })
}

/// Monte Carlo entropy in nats with its standard error; `std_error` may be null.
///
/// # Safety
/// `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn isingnet_dg_entropy_mc(
    m: *const IsingnetDg,
    n_outer: usize,
    n_pmf: usize,
    seed: u64,
    value: *mut f64,
    std_error: *mut f64,
) -> IsingnetStatus {
    guard(|| {
        let m = handle(m, "model")?;
        if value.is_null() {
            return Err(null("value"));
        }
        let est = dg_entropy_mc(&m.0, n_outer, n_pmf, seed)?;
        *value = est.value;
        if !std_error.is_null() {
            *std_error = est.std_error;
        }
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn isingnet_dg_free(m: *mut IsingnetDg) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Balances a `rows * cols` matrix to row targets `target_o` and column
/// targets `target_d`. The result goes to `out` (same shape); `iterations`
/// and `error` may be null.
///
/// # Safety
/// Array arguments must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn isingnet_ipf(
    rows: usize,
    cols: usize,
    init: *const f64,
    target_o: *const f64,
    target_d: *const f64,
    eps0: f64,
    max_iters: usize,
    out: *mut f64,
    iterations: *mut usize,
    error: *mut f64,
) -> IsingnetStatus {
    guard(|| {
        let init = DMatrix::from_row_slice(rows, cols, slice(init, rows * cols, "init")?);
        let o = slice(target_o, rows, "target_o")?;
        let d = slice(target_d, cols, "target_d")?;
        let opts = IpfOptions {
            eps0,
            max_iters,
            ..Default::default()
        };
        let r = ipf_adjust(&init, o, d, &opts)?;
        copy_matrix(&r.matrix, slice_mut(out, rows * cols, "out")?);
        if !iterations.is_null() {
            *iterations = r.iterations;
        }
        if !error.is_null() {
            *error = r.error;
        }
        Ok(())
    })
}

/// Mean log peak ground acceleration at epicentral distance `r_km`.
#[no_mangle]
pub extern "C" fn isingnet_attenuation(magnitude: f64, r_km: f64) -> f64 {
    isingnet::hazard::attenuation(magnitude, r_km)
}
