//! C interface to `maxstab`.
//!
//! Objects are opaque handles created by `ms_*_new`/`ms_*_load`/`ms_fit` and
//! released with the matching `ms_*_free`. Every fallible call returns an
//! [`MsStatus`]; the message for the most recent failure on the calling
//! thread is available through [`ms_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use maxstab::data::{DataSet, Site};
use maxstab::design::ModelSpec;
use maxstab::inference::{self, FitOptions, FitResult, SeKind};
use maxstab::smith::{self, CovMatrix};
use maxstab::{gev, simulate, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numerical = 4,
    /// The fit handle is valid but the optimizer stopped early.
    NotConverged = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Block-maxima panel.
pub struct MsDataset(DataSet);

/// Parsed model description.
pub struct MsModel(ModelSpec);

/// Fitted model.
pub struct MsFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> MsStatus {
    match e {
        Error::InvalidArgument(_) | Error::UnknownCovariate(_) | Error::Parse { .. } => MsStatus::InvalidArgument,
        Error::Data(_) | Error::Io { .. } | Error::Csv(_) | Error::Json(_) | Error::SupportViolation(_) => MsStatus::Data,
        _ => MsStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<MsStatus, (MsStatus, String)>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            MsStatus::Panic
        }
    }
}

fn lib<T>(r: maxstab::Result<T>) -> Result<T, (MsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (MsStatus, String) {
    (MsStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, (MsStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MsStatus::InvalidArgument, "string is not valid UTF-8".into()))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize) -> Result<&'a [T], (MsStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<MsStatus, (MsStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    *out = v;
    Ok(MsStatus::Ok)
}

/// Copies the last error message (NUL-terminated, truncated to fit) into
/// `buf` and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ms_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a panel from arrays. `ids` may be null, giving ids `S1`, `S2`, ...;
/// `maxima` is `n_years × n_sites` row-major with NaN for missing values.
///
/// # Safety
/// Array arguments must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ms_dataset_new(
    n_sites: usize,
    ids: *const *const c_char,
    lon: *const f64,
    lat: *const f64,
    alt: *const f64,
    n_years: usize,
    years: *const i64,
    maxima: *const f64,
    out: *mut *mut MsDataset,
) -> MsStatus {
    guard(|| {
        let lon = slice_arg(lon, n_sites)?;
        let lat = slice_arg(lat, n_sites)?;
        let alt = if alt.is_null() { None } else { Some(slice_arg(alt, n_sites)?) };
        let mut sites = Vec::with_capacity(n_sites);
        for k in 0..n_sites {
            let id = if ids.is_null() {
                format!("S{}", k + 1)
            } else {
                str_arg(*ids.add(k))?.to_string()
            };
            sites.push(Site::new(id, lon[k], lat[k], alt.map_or(0.0, |a| a[k])));
        }
        let years = slice_arg(years, n_years)?.to_vec();
        let values = slice_arg(maxima, n_years * n_sites)?.to_vec();
        let d = lib(DataSet::new(sites, years, values))?;
        write_out(out, Box::into_raw(Box::new(MsDataset(d))))
    })
}

/// Loads a panel from station and maxima CSV files.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_dataset_load(stations: *const c_char, maxima: *const c_char, out: *mut *mut MsDataset) -> MsStatus {
    guard(|| {
        let d = lib(maxstab::io::load_dataset(Path::new(str_arg(stations)?), Path::new(str_arg(maxima)?)))?;
        write_out(out, Box::into_raw(Box::new(MsDataset(d))))
    })
}

/// # Safety
/// `d` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_dataset_free(d: *mut MsDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// # Safety
/// `d` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_dataset_n_sites(d: *const MsDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.n_sites())
}

/// # Safety
/// `d` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_dataset_n_years(d: *const MsDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.n_years())
}

/// Parses a model description in the model-file syntax.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_model_parse(text: *const c_char, out: *mut *mut MsModel) -> MsStatus {
    guard(|| {
        let m = lib(ModelSpec::parse(str_arg(text)?))?;
        write_out(out, Box::into_raw(Box::new(MsModel(m))))
    })
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_model_free(m: *mut MsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Fits `model` to `data` with default options. On `MS_STATUS_NOT_CONVERGED`
/// the handle is still written and must be freed.
///
/// # Safety
/// `data` and `model` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_fit(data: *const MsDataset, model: *const MsModel, out: *mut *mut MsFit) -> MsStatus {
    guard(|| {
        let (Some(d), Some(m)) = (data.as_ref(), model.as_ref()) else {
            return Err(null());
        };
        if out.is_null() {
            return Err(null());
        }
        let fit = lib(inference::fit(&d.0, &m.0, &FitOptions::default()))?;
        let converged = fit.convergence.converged;
        *out = Box::into_raw(Box::new(MsFit(fit)));
        if converged {
            Ok(MsStatus::Ok)
        } else {
            set_error("optimizer did not converge");
            Ok(MsStatus::NotConverged)
        }
    })
}

/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_fit_free(f: *mut MsFit) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Number of parameters.
///
/// # Safety
/// `f` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_fit_dim(f: *const MsFit) -> usize {
    f.as_ref().map_or(0, |f| f.0.dim())
}

/// Name of parameter `k`, copied like [`ms_last_error`]; returns the full
/// length, or 0 when `k` is out of range.
///
/// # Safety
/// `f` must be a live handle; `buf` null or `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ms_fit_param_name(f: *const MsFit, k: usize, buf: *mut c_char, len: usize) -> usize {
    let Some(name) = f.as_ref().and_then(|f| f.0.names.get(k)) else {
        return 0;
    };
    if !buf.is_null() && len > 0 {
        let n = name.len().min(len - 1);
        std::ptr::copy_nonoverlapping(name.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    name.len()
}

/// Estimates on the reported scale and Godambe standard errors (NaN where
/// unavailable or fixed). Either output may be null.
///
/// # Safety
/// Non-null outputs must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_fit_estimates(f: *const MsFit, estimates: *mut f64, se: *mut f64, len: usize) -> MsStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(null)?;
        if len < f.0.dim() {
            return Err((MsStatus::BufferTooSmall, format!("need {} entries", f.0.dim())));
        }
        if !estimates.is_null() {
            std::slice::from_raw_parts_mut(estimates, len)[..f.0.dim()].copy_from_slice(&f.0.estimates());
        }
        if !se.is_null() {
            let out = std::slice::from_raw_parts_mut(se, len);
            for (o, s) in out.iter_mut().zip(f.0.standard_errors(SeKind::Godambe)) {
                *o = s.unwrap_or(f64::NAN);
            }
        }
        Ok(MsStatus::Ok)
    })
}

/// Negative pairwise log-likelihood and CLIC (NaN when undefined).
///
/// # Safety
/// `f` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn ms_fit_summary(f: *const MsFit, nll: *mut f64, clic: *mut f64) -> MsStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(null)?;
        if !nll.is_null() {
            *nll = f.0.nll;
        }
        if !clic.is_null() {
            *clic = f.0.clic.unwrap_or(f64::NAN);
        }
        Ok(MsStatus::Ok)
    })
}

fn cov(s11: f64, s12: f64, s22: f64) -> Result<CovMatrix, (MsStatus, String)> {
    lib(CovMatrix::new(s11, s12, s22))
}

/// `θ(h) = 2Φ(a(h)/2)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_extremal_coefficient(dx: f64, dy: f64, s11: f64, s12: f64, s22: f64, out: *mut f64) -> MsStatus {
    guard(|| {
        let a = lib(smith::mahalanobis_a([dx, dy], &cov(s11, s12, s22)?))?;
        write_out(out, smith::extremal_coefficient(a))
    })
}

/// Bivariate unit-Fréchet CDF at dependence distance `a`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_bivariate_cdf(z_i: f64, z_j: f64, a: f64, out: *mut f64) -> MsStatus {
    guard(|| write_out(out, lib(smith::bivariate_cdf(z_i, z_j, a))?))
}

/// Log of the bivariate density.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_bivariate_log_density(z_i: f64, z_j: f64, a: f64, out: *mut f64) -> MsStatus {
    guard(|| write_out(out, lib(smith::bivariate_log_density(z_i, z_j, a))?))
}

/// GEV `T`-year return level.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_gev_return_level(loc: f64, scale: f64, shape: f64, period: f64, out: *mut f64) -> MsStatus {
    guard(|| {
        let p = lib(gev::GevParams::new(loc, scale, shape))?;
        write_out(out, lib(gev::return_level(&p, period))?)
    })
}

/// One unit-Fréchet field at `n` sites given as interleaved `(x, y)` pairs.
///
/// # Safety
/// `coords` must hold `2n` doubles and `out` `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_simulate_field(
    s11: f64,
    s12: f64,
    s22: f64,
    coords: *const f64,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> MsStatus {
    guard(|| {
        let c = slice_arg(coords, 2 * n)?;
        if out.is_null() && n > 0 {
            return Err(null());
        }
        let pts: Vec<[f64; 2]> = c.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let z = lib(simulate::simulate_smith_field(cov(s11, s12, s22)?, &pts, seed))?;
        if n > 0 {
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&z);
        }
        Ok(MsStatus::Ok)
    })
}
