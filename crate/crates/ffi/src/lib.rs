//! C ABI over the privlms experiment harness.
//!
//! Configurations and result bundles are opaque handles created and released
//! by this library. Every fallible call returns a [`PrivlmsStatus`]; the text of
//! the most recent error on the calling thread is available through
//! [`privlms_last_error_message`]. Strings returned by the library must be
//! released with [`privlms_string_free`].
//!
//! Matrices are passed as column-major `m × m` arrays of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use privlms::harness::{self, OutputBundle, ScenarioConfig};
use privlms::nalgebra::DMatrix;
use privlms::{privacy, Error};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrivlmsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Dimension = 4,
    Assumption = 5,
    Infeasible = 6,
    Numerical = 7,
    Unstable = 8,
    DimensionCap = 9,
    Io = 10,
    Serialization = 11,
    OutOfRange = 12,
    Panic = 13,
}

/// Curve column selector for [`privlms_bundle_curve`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrivlmsColumn {
    MsdEmpDb = 0,
    MsdThDb = 1,
    XiEmpDb = 2,
    XiThDb = 3,
    SigmaMean = 4,
}

/// Opaque scenario configuration.
pub struct PrivlmsConfig {
    inner: ScenarioConfig,
}

/// Opaque experiment result.
pub struct PrivlmsBundle {
    inner: OutputBundle,
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

fn status_of(e: &Error) -> PrivlmsStatus {
    match e.category() {
        "config" => PrivlmsStatus::Config,
        "dimension" => PrivlmsStatus::Dimension,
        "assumption" => PrivlmsStatus::Assumption,
        "infeasible" => PrivlmsStatus::Infeasible,
        "numerical" => PrivlmsStatus::Numerical,
        "unstable" => PrivlmsStatus::Unstable,
        "dimension_cap" => PrivlmsStatus::DimensionCap,
        "io" => PrivlmsStatus::Io,
        _ => PrivlmsStatus::Serialization,
    }
}

fn fail(status: PrivlmsStatus, msg: impl Into<String>) -> PrivlmsStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> PrivlmsStatus) -> PrivlmsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(PrivlmsStatus::Panic, "internal panic"),
    }
}

fn lift(r: privlms::Result<()>) -> PrivlmsStatus {
    match r {
        Ok(()) => PrivlmsStatus::Ok,
        Err(e) => fail(status_of(&e), format!("{}: {e}", e.category())),
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, PrivlmsStatus> {
    if p.is_null() {
        return Err(fail(PrivlmsStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PrivlmsStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

unsafe fn read_square(p: *const f64, m: usize) -> Result<DMatrix<f64>, PrivlmsStatus> {
    if p.is_null() {
        return Err(fail(PrivlmsStatus::NullArgument, "null matrix argument"));
    }
    let data = std::slice::from_raw_parts(p, m * m);
    Ok(DMatrix::from_column_slice(m, m, data))
}

/// Text of the last error raised on this thread, or null.
///
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn privlms_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library.
///
/// # Safety
///
/// `s` must be null or a pointer obtained from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn privlms_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a configuration from a preset name and optional JSON overrides.
///
/// # Safety
///
/// `name` must be a NUL-terminated string, `overrides_json` null or a
/// NUL-terminated string, and `out` a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn privlms_config_from_preset(
    name: *const c_char,
    overrides_json: *const c_char,
    out: *mut *mut PrivlmsConfig,
) -> PrivlmsStatus {
    guard(|| {
        if out.is_null() {
            return fail(PrivlmsStatus::NullArgument, "null output handle");
        }
        let name = match read_str(name) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let overrides = if overrides_json.is_null() {
            None
        } else {
            let text = match read_str(overrides_json) {
                Ok(s) => s,
                Err(s) => return s,
            };
            match serde_json::from_str::<serde_json::Value>(text) {
                Ok(v) => Some(v),
                Err(e) => return fail(PrivlmsStatus::Config, format!("config: {e}")),
            }
        };
        match harness::preset(name, overrides.as_ref()) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(PrivlmsConfig { inner: cfg }));
                PrivlmsStatus::Ok
            }
            Err(e) => lift(Err(e)),
        }
    })
}

/// Parse a full JSON configuration.
///
/// # Safety
///
/// `json` must be a NUL-terminated string and `out` a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn privlms_config_from_json(json: *const c_char, out: *mut *mut PrivlmsConfig) -> PrivlmsStatus {
    guard(|| {
        if out.is_null() {
            return fail(PrivlmsStatus::NullArgument, "null output handle");
        }
        let text = match read_str(json) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match ScenarioConfig::from_json(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(PrivlmsConfig { inner: cfg }));
                PrivlmsStatus::Ok
            }
            Err(e) => lift(Err(e)),
        }
    })
}

/// JSON text of a configuration; null on a null handle.
///
/// # Safety
///
/// `cfg` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn privlms_config_to_json(cfg: *const PrivlmsConfig) -> *mut c_char {
    match cfg.as_ref() {
        Some(c) => to_c_string(c.inner.to_json()),
        None => ptr::null_mut(),
    }
}

/// # Safety
///
/// `cfg` must be null or a live handle from this library; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn privlms_config_free(cfg: *mut PrivlmsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run the configured experiment.
///
/// # Safety
///
/// `cfg` must be a live configuration handle and `out` a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn privlms_run(cfg: *const PrivlmsConfig, force: bool, out: *mut *mut PrivlmsBundle) -> PrivlmsStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(PrivlmsStatus::NullArgument, "null configuration");
        };
        if out.is_null() {
            return fail(PrivlmsStatus::NullArgument, "null output handle");
        }
        match harness::run_experiment(&cfg.inner, force) {
            Ok(b) => {
                *out = Box::into_raw(Box::new(PrivlmsBundle { inner: b }));
                PrivlmsStatus::Ok
            }
            Err(e) => lift(Err(e)),
        }
    })
}

/// # Safety
///
/// `b` must be null or a live handle from this library; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn privlms_bundle_free(b: *mut PrivlmsBundle) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Number of curve families, 0 for a null handle.
///
/// # Safety
///
/// `b` must be null or a live bundle handle.
#[no_mangle]
pub unsafe extern "C" fn privlms_bundle_family_count(b: *const PrivlmsBundle) -> usize {
    b.as_ref().map_or(0, |b| b.inner.families.len())
}

/// Number of iterations per curve, 0 for a null handle.
///
/// # Safety
///
/// `b` must be null or a live bundle handle.
#[no_mangle]
pub unsafe extern "C" fn privlms_bundle_iterations(b: *const PrivlmsBundle) -> usize {
    b.as_ref().map_or(0, |b| b.inner.summary.iterations)
}

/// Label of family `index` (as used in CSV file names); null when out of range.
///
/// # Safety
///
/// `b` must be null or a live bundle handle.
#[no_mangle]
pub unsafe extern "C" fn privlms_bundle_family_label(b: *const PrivlmsBundle, index: usize) -> *mut c_char {
    match b.as_ref().and_then(|b| b.inner.families.get(index)) {
        Some(f) => to_c_string(f.spec.label.clone()),
        None => ptr::null_mut(),
    }
}

/// Copy one curve column into `out`; missing values are written as NaN.
///
/// # Safety
///
/// `b` must be a live bundle handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn privlms_bundle_curve(
    b: *const PrivlmsBundle,
    index: usize,
    column: PrivlmsColumn,
    out: *mut f64,
    len: usize,
) -> PrivlmsStatus {
    guard(|| {
        let Some(b) = b.as_ref() else {
            return fail(PrivlmsStatus::NullArgument, "null bundle");
        };
        if out.is_null() {
            return fail(PrivlmsStatus::NullArgument, "null output buffer");
        }
        let Some(fam) = b.inner.families.get(index) else {
            return fail(PrivlmsStatus::OutOfRange, format!("family index {index} out of range"));
        };
        if len < fam.rows.len() {
            return fail(PrivlmsStatus::OutOfRange, format!("buffer holds {len} values, {} needed", fam.rows.len()));
        }
        let dst = std::slice::from_raw_parts_mut(out, fam.rows.len());
        for (d, r) in dst.iter_mut().zip(&fam.rows) {
            let v = match column {
                PrivlmsColumn::MsdEmpDb => r.msd_emp.map(harness::to_db),
                PrivlmsColumn::MsdThDb => r.msd_th.map(harness::to_db),
                PrivlmsColumn::XiEmpDb => r.xi_emp.map(harness::to_db),
                PrivlmsColumn::XiThDb => r.xi_th.map(harness::to_db),
                PrivlmsColumn::SigmaMean => Some(r.sigma_mean),
            };
            *d = v.unwrap_or(f64::NAN);
        }
        PrivlmsStatus::Ok
    })
}

/// Summary document as JSON text; null on a null handle.
///
/// # Safety
///
/// `b` must be null or a live bundle handle.
#[no_mangle]
pub unsafe extern "C" fn privlms_bundle_summary_json(b: *const PrivlmsBundle) -> *mut c_char {
    match b.as_ref().map(|b| harness::summary_json(&b.inner)) {
        Some(Ok(s)) => to_c_string(s),
        _ => ptr::null_mut(),
    }
}

/// Write CSV curves, summary and charts into `dir`.
///
/// # Safety
///
/// `b` must be a live bundle handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn privlms_bundle_emit(b: *const PrivlmsBundle, dir: *const c_char) -> PrivlmsStatus {
    guard(|| {
        let Some(b) = b.as_ref() else {
            return fail(PrivlmsStatus::NullArgument, "null bundle");
        };
        let dir = match read_str(dir) {
            Ok(s) => s,
            Err(s) => return s,
        };
        lift(harness::emit(&b.inner, Path::new(dir)).map(|_| ()))
    })
}

/// Sufficient privacy-noise power `‖U‖²_F / (tr W − δ)`.
///
/// # Safety
///
/// `u` and `w` must point to `m*m` doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn privlms_sufficient_power(
    u: *const f64,
    w: *const f64,
    m: usize,
    delta: f64,
    out: *mut f64,
) -> PrivlmsStatus {
    guard(|| {
        if out.is_null() {
            return fail(PrivlmsStatus::NullArgument, "null output");
        }
        let (u, w) = match (read_square(u, m), read_square(w, m)) {
            (Ok(u), Ok(w)) => (u, w),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        lift(privacy::sufficient_power(&u, &w, delta).map(|v| *out = v))
    })
}

/// Limit privacy-noise power `tr(W²) / (tr W − δ)`.
///
/// # Safety
///
/// `w` must point to `m*m` doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn privlms_steady_state_power(w: *const f64, m: usize, delta: f64, out: *mut f64) -> PrivlmsStatus {
    guard(|| {
        if out.is_null() {
            return fail(PrivlmsStatus::NullArgument, "null output");
        }
        let w = match read_square(w, m) {
            Ok(w) => w,
            Err(s) => return s,
        };
        lift(privacy::steady_state_power(&w, delta).map(|v| *out = v))
    })
}
