//! C ABI for the trial-analysis library.
//!
//! Handles are opaque pointers created and freed by this library; every
//! fallible call returns an [`AptmleStatus`] and records a message
//! retrievable with [`aptmle_last_error`]. Strings returned by the library
//! are NUL-terminated, UTF-8, and must be released with
//! [`aptmle_string_free`]. All entry points catch panics and turn them into
//! `AptmleStatus::Panic`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::c_char;

use aptmle::config::{parse_analysis_config, AnalysisConfig};
use aptmle::data::{load_csv, TrialDataset};
use aptmle::error::Error;
use aptmle::report::{analyze, AnalysisReport};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AptmleStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    ConfigError = 4,
    DataError = 5,
    EstimationError = 6,
    IoError = 7,
    Panic = 8,
}

/// Opaque handle: a parsed and validated analysis configuration.
pub struct AptmleConfig {
    inner: AnalysisConfig,
}

/// Opaque handle: a loaded and validated trial dataset.
pub struct AptmleDataset {
    inner: TrialDataset,
}

/// Opaque handle: a completed analysis report.
pub struct AptmleReport {
    inner: AnalysisReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let cstring = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("invalid error message").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn status_of(err: &Error) -> AptmleStatus {
    match err {
        Error::Io(_) => AptmleStatus::IoError,
        Error::Parse(_) => AptmleStatus::ParseError,
        Error::Config(_) => AptmleStatus::ConfigError,
        Error::Data(_) => AptmleStatus::DataError,
        Error::Estimation(_) => AptmleStatus::EstimationError,
    }
}

fn fail(err: Error) -> AptmleStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn guarded(f: impl FnOnce() -> AptmleStatus) -> AptmleStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".into());
            AptmleStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or null.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, AptmleStatus> {
    if ptr.is_null() {
        set_error("null string argument".into());
        return Err(AptmleStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8".into());
        AptmleStatus::InvalidUtf8
    })
}

fn string_out(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn aptmle_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent error on this thread, or null when none was
/// recorded. The caller frees it with [`aptmle_string_free`].
#[no_mangle]
pub extern "C" fn aptmle_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Free a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn aptmle_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse and validate an analysis configuration (TOML text, including the
/// `[data]` column mapping). On success writes a new handle to `out`.
///
/// # Safety
/// `text` must be a valid NUL-terminated string; `out` must be a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn aptmle_config_parse(
    text: *const c_char,
    out: *mut *mut AptmleConfig,
) -> AptmleStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer".into());
            return AptmleStatus::NullArgument;
        }
        let text = match utf8_arg(text) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match parse_analysis_config(text) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(AptmleConfig { inner: config }));
                AptmleStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `config` must be a handle from [`aptmle_config_parse`] or null.
#[no_mangle]
pub unsafe extern "C" fn aptmle_config_free(config: *mut AptmleConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Load and validate a trial CSV against the config's column mapping.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `config` a live config
/// handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aptmle_dataset_load_csv(
    path: *const c_char,
    config: *const AptmleConfig,
    out: *mut *mut AptmleDataset,
) -> AptmleStatus {
    guarded(|| {
        if config.is_null() || out.is_null() {
            set_error("null argument".into());
            return AptmleStatus::NullArgument;
        }
        let path = match utf8_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_csv(Path::new(path), &(*config).inner.data) {
            Ok(data) => {
                *out = Box::into_raw(Box::new(AptmleDataset { inner: data }));
                AptmleStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `dataset` must be a handle from [`aptmle_dataset_load_csv`] or null.
#[no_mangle]
pub unsafe extern "C" fn aptmle_dataset_free(dataset: *mut AptmleDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of rows in a loaded dataset; 0 for a null handle.
///
/// # Safety
/// `dataset` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn aptmle_dataset_n_units(dataset: *const AptmleDataset) -> u64 {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.n_units() as u64
}

/// Run the full pre-specified analysis for a config and a CSV path. Pass a
/// null `seed_override` to use the configured seed. On success writes a new
/// report handle to `out`.
///
/// # Safety
/// `config` must be a live config handle; `csv_path` a valid NUL-terminated
/// string; `seed_override` null or a valid pointer; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aptmle_analyze_csv(
    config: *const AptmleConfig,
    csv_path: *const c_char,
    seed_override: *const u64,
    out: *mut *mut AptmleReport,
) -> AptmleStatus {
    guarded(|| {
        if config.is_null() || out.is_null() {
            set_error("null argument".into());
            return AptmleStatus::NullArgument;
        }
        let path = match utf8_arg(csv_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let seed = if seed_override.is_null() { None } else { Some(*seed_override) };
        match analyze(&(*config).inner, Path::new(path), seed) {
            Ok(report) => {
                *out = Box::into_raw(Box::new(AptmleReport { inner: report }));
                AptmleStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `report` must be a handle from [`aptmle_analyze_csv`] or null.
#[no_mangle]
pub unsafe extern "C" fn aptmle_report_free(report: *mut AptmleReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

unsafe fn report_scalar(
    report: *const AptmleReport,
    out: *mut f64,
    get: impl Fn(&AnalysisReport) -> f64,
) -> AptmleStatus {
    if report.is_null() || out.is_null() {
        set_error("null argument".into());
        return AptmleStatus::NullArgument;
    }
    *out = get(&(*report).inner);
    AptmleStatus::Ok
}

/// Effect estimate on the natural outcome scale.
///
/// # Safety
/// `report` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aptmle_report_effect(
    report: *const AptmleReport,
    out: *mut f64,
) -> AptmleStatus {
    guarded(|| report_scalar(report, out, |r| r.final_estimate.effect))
}

/// Standard error on the inference scale (log scale for ratios).
///
/// # Safety
/// `report` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aptmle_report_se(
    report: *const AptmleReport,
    out: *mut f64,
) -> AptmleStatus {
    guarded(|| report_scalar(report, out, |r| r.final_estimate.se))
}

/// Confidence-interval bounds of the final estimate.
///
/// # Safety
/// `report` must be a live report handle; `lo` and `hi` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn aptmle_report_ci(
    report: *const AptmleReport,
    lo: *mut f64,
    hi: *mut f64,
) -> AptmleStatus {
    guarded(|| {
        if report.is_null() || lo.is_null() || hi.is_null() {
            set_error("null argument".into());
            return AptmleStatus::NullArgument;
        }
        *lo = (*report).inner.final_estimate.ci_lower;
        *hi = (*report).inner.final_estimate.ci_upper;
        AptmleStatus::Ok
    })
}

/// Estimated variance of the unadjusted estimator over that of the selected
/// TMLE.
///
/// # Safety
/// `report` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aptmle_report_precision_gain(
    report: *const AptmleReport,
    out: *mut f64,
) -> AptmleStatus {
    guarded(|| report_scalar(report, out, |r| r.precision_gain))
}

/// Selected outcome-regression learner, as its config-grammar string.
/// Returns null on a null handle. Free with [`aptmle_string_free`].
///
/// # Safety
/// `report` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn aptmle_report_selected_or(report: *const AptmleReport) -> *mut c_char {
    if report.is_null() {
        return std::ptr::null_mut();
    }
    string_out((*report).inner.selection.or_selected.clone())
}

/// Selected propensity-score learner, as its config-grammar string.
/// Returns null on a null handle. Free with [`aptmle_string_free`].
///
/// # Safety
/// `report` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn aptmle_report_selected_ps(report: *const AptmleReport) -> *mut c_char {
    if report.is_null() {
        return std::ptr::null_mut();
    }
    string_out((*report).inner.selection.ps_selected.clone())
}

/// Full report as a JSON document. Free with [`aptmle_string_free`].
///
/// # Safety
/// `report` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn aptmle_report_to_json(report: *const AptmleReport) -> *mut c_char {
    if report.is_null() {
        return std::ptr::null_mut();
    }
    string_out((*report).inner.to_json())
}

/// Human-readable report summary. Free with [`aptmle_string_free`].
///
/// # Safety
/// `report` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn aptmle_report_summary(report: *const AptmleReport) -> *mut c_char {
    if report.is_null() {
        return std::ptr::null_mut();
    }
    string_out((*report).inner.render_text())
}
