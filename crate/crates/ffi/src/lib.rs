//! C ABI for crashmle.
//!
//! Tables, specs and fits are opaque handles created by `cm_*_load`/`cm_fit`
//! and released with the matching `cm_*_free`. Every fallible call returns a
//! [`CmStatus`]; on failure [`cm_last_error`] gives the message for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use crashmle::mixed::{halton, sign_share, Mixing};
use crashmle::{lrtest, CoefKind, Error, FitOptions, FitResult, LoadOptions, Mode, ModelSpec, ObservationTable};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Data = 4,
    Spec = 5,
    Domain = 6,
    NotConverged = 7,
    Config = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Other = 11,
}

/// Outcome type of a table: severity labels or accident counts.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmMode {
    Severity = 0,
    Frequency = 1,
}

/// Mixing distribution for [`cm_sign_share`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmMixing {
    Normal = 0,
    Uniform = 1,
}

pub struct CmTable(ObservationTable);
pub struct CmSpec(ModelSpec);
pub struct CmFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CmStatus {
    match err {
        Error::Io { .. } => CmStatus::Io,
        Error::Csv(_)
        | Error::Json(_)
        | Error::MissingColumn(_)
        | Error::UnknownOutcome { .. }
        | Error::NegativeCount { .. }
        | Error::NonIntegerCount { .. }
        | Error::NonNumeric { .. }
        | Error::NonBinaryFlag { .. }
        | Error::EmptyData => CmStatus::Data,
        Error::SpecParse { .. }
        | Error::InvalidSpec(_)
        | Error::UnknownVariable(_)
        | Error::EmptyModel
        | Error::VariableNotInModel(_)
        | Error::VariableKind { .. } => CmStatus::Spec,
        Error::Domain(_) | Error::NonFinite(_) | Error::Dimension { .. } => CmStatus::Domain,
        Error::NotConverged(_) | Error::ReplicateFailures { .. } => CmStatus::NotConverged,
        Error::Config(_) | Error::TooFewDraws(_) => CmStatus::Config,
    }
}

struct Fail(CmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic for [`cm_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(CmStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CmStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(CmStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(CmStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn write_slice(values: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if values.len() > len {
        return Err(Fail(
            CmStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(Fail(CmStatus::NullPointer, "`out` is null".into()));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a CSV table. `outcome_column` names the severity label or count column.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_table_load(
    path: *const c_char,
    mode: CmMode,
    outcome_column: *const c_char,
    out: *mut *mut CmTable,
) -> CmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let column = str_arg(outcome_column, "outcome_column")?;
        let mode = match mode {
            CmMode::Severity => Mode::Severity,
            CmMode::Frequency => Mode::Frequency,
        };
        let table = crashmle::load_csv(path, &LoadOptions::new(mode, column))?;
        *out = Box::into_raw(Box::new(CmTable(table)));
        Ok(())
    })
}

/// Number of rows kept after dropping rows with missing values; 0 for null.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cm_table_n_rows(table: *const CmTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.n_rows())
}

/// # Safety
/// `table` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cm_table_free(table: *mut CmTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Parse a model spec from INI text.
///
/// # Safety
/// `text` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_spec_parse(text: *const c_char, out: *mut *mut CmSpec) -> CmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let spec = ModelSpec::parse(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(CmSpec(spec)));
        Ok(())
    })
}

/// Load a model spec from an INI file.
///
/// # Safety
/// `path` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_spec_load(path: *const c_char, out: *mut *mut CmSpec) -> CmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let spec = ModelSpec::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(CmSpec(spec)));
        Ok(())
    })
}

/// Number of estimable parameters; 0 for null.
///
/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cm_spec_n_params(spec: *const CmSpec) -> usize {
    spec.as_ref().map_or(0, |s| s.0.n_params())
}

/// # Safety
/// `spec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cm_spec_free(spec: *mut CmSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Fit `spec` to `table`. `draws` is the number of simulation draws for mixed
/// families (0 keeps the default). A fit that runs but does not converge is
/// still returned through `out`, with status `NotConverged`.
///
/// # Safety
/// `table` and `spec` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_fit(
    table: *const CmTable,
    spec: *const CmSpec,
    draws: usize,
    seed: u64,
    out: *mut *mut CmFit,
) -> CmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let table = ref_arg(table, "table")?;
        let spec = ref_arg(spec, "spec")?;
        let mut opts = FitOptions {
            seed,
            ..FitOptions::default()
        };
        if draws > 0 {
            opts.draws = draws;
        }
        let fit = crashmle::fit(&table.0, &spec.0, &opts)?;
        let converged = fit.converged;
        let term = format!("{:?}", fit.termination);
        *out = Box::into_raw(Box::new(CmFit(fit)));
        if converged {
            Ok(())
        } else {
            Err(Fail(CmStatus::NotConverged, format!("fit did not converge: {term}")))
        }
    })
}

/// Number of estimated parameters; 0 for null.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_n_params(fit: *const CmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.theta_hat.len())
}

/// 1 if the optimizer converged, 0 otherwise (and for null).
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_converged(fit: *const CmFit) -> i32 {
    fit.as_ref().is_some_and(|f| f.0.converged) as i32
}

/// Copy the estimates (reporting units) into `out[0..len]`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_estimates(fit: *const CmFit, out: *mut f64, len: usize) -> CmStatus {
    guard(|| write_slice(&ref_arg(fit, "fit")?.0.theta_hat, out, len))
}

/// Copy the standard errors into `out[0..len]`; NaN where unavailable.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_standard_errors(fit: *const CmFit, out: *mut f64, len: usize) -> CmStatus {
    guard(|| {
        let se: Vec<f64> = ref_arg(fit, "fit")?
            .0
            .standard_errors
            .iter()
            .map(|s| s.unwrap_or(f64::NAN))
            .collect();
        write_slice(&se, out, len)
    })
}

/// Log-likelihood at convergence, restricted log-likelihood and McFadden ρ².
///
/// # Safety
/// `fit` must be a live handle; each output pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_loglik(
    fit: *const CmFit,
    ll: *mut f64,
    ll_restricted: *mut f64,
    rho2: *mut f64,
) -> CmStatus {
    guard(|| {
        let f = &ref_arg(fit, "fit")?.0;
        *out_arg(ll, "ll")? = f.ll_converged;
        *out_arg(ll_restricted, "ll_restricted")? = f.ll_restricted;
        *out_arg(rho2, "rho2")? = f.mcfadden_rho2;
        Ok(())
    })
}

/// Serialize the fit as JSON. Release the string with [`cm_string_free`].
///
/// # Safety
/// `fit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_to_json(fit: *const CmFit, out: *mut *mut c_char) -> CmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let json = ref_arg(fit, "fit")?.0.to_json()?;
        let c = CString::new(json).map_err(|e| Fail(CmStatus::Other, e.to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_free(fit: *mut CmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Upper tail probability of χ² with `dof` degrees of freedom.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_chi2_sf(x: f64, dof: f64, out: *mut f64) -> CmStatus {
    guard(|| {
        *out_arg(out, "out")? = lrtest::chi2_sf(x, dof)?;
        Ok(())
    })
}

/// Quantile of χ² with `dof` degrees of freedom at probability `p`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_chi2_quantile(p: f64, dof: f64, out: *mut f64) -> CmStatus {
    guard(|| {
        *out_arg(out, "out")? = lrtest::chi2_quantile(p, dof)?;
        Ok(())
    })
}

/// Likelihood-ratio statistic of a pooled model against two sub-models.
///
/// # Safety
/// `x2` and `dof` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_lr_statistic(
    ll_all: f64,
    ll_a: f64,
    ll_b: f64,
    params_all: usize,
    params_a: usize,
    params_b: usize,
    x2: *mut f64,
    dof: *mut usize,
) -> CmStatus {
    guard(|| {
        let (s, d) = lrtest::lr_statistic(ll_all, ll_a, ll_b, params_all, params_a, params_b)?;
        *out_arg(x2, "x2")? = s;
        *out_arg(dof, "dof")? = d;
        Ok(())
    })
}

/// Share of the population with a negative coefficient. `scale` is the
/// standard deviation (normal) or half-width (uniform).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_sign_share(
    kind: CmMixing,
    location: f64,
    scale: f64,
    out: *mut f64,
) -> CmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if !(scale > 0.0 && scale.is_finite()) || !location.is_finite() {
            return Err(Fail(CmStatus::Domain, format!("need finite location and scale > 0, got {location}, {scale}")));
        }
        let kind = match kind {
            CmMixing::Normal => CoefKind::RandomNormal,
            CmMixing::Uniform => CoefKind::RandomUniform,
        };
        *out = sign_share(&Mixing { kind, location, scale });
        Ok(())
    })
}

/// `count` Halton points in base `prime` after discarding the first `skip`.
///
/// # Safety
/// `out` must hold `count` doubles.
#[no_mangle]
pub unsafe extern "C" fn cm_halton(prime: u64, count: usize, skip: usize, out: *mut f64) -> CmStatus {
    guard(|| write_slice(&halton(prime, count, skip)?, out, count))
}
