//! C ABI for the `chanest` simulator.
//!
//! The interface follows the usual handle/status pattern: configs and result
//! sets are opaque heap objects created and destroyed through paired
//! constructor/free calls, every fallible function returns a
//! [`ChanestStatus`], and the detail text of the most recent failure on the
//! calling thread is available through [`chanest_last_error`].
//!
//! Config handles start from one of the built-in presets and are edited with
//! `chanest_config_set(key, value)`, which accepts exactly the keys of the
//! text config format (`trials`, `snr_db`, `estimators`, `dip_width`, ...),
//! so the C surface never lags behind the config schema.
//!
//! The generated header lands in `include/chanest.h`; it is regenerated by
//! the build script and committed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use chanest::harness::{
    apply_config_text, run_experiment, run_hwi_sweep, write_csv, ExperimentConfig, HarnessError,
    MetricMode, RunOutput,
};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChanestStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidString = 2,
    /// The configuration is invalid (unknown key, bad value, failed
    /// cross-field validation).
    ConfigError = 3,
    /// The run itself failed (I/O, numerical failure).
    RuntimeError = 4,
    /// An index was out of bounds.
    OutOfRange = 5,
    /// No aggregate cell matches the requested estimator/SNR/metric.
    NotFound = 6,
    /// The callee panicked; the handle may be in an unusable state.
    Panic = 7,
}

/// Which NMSE definition a record carries.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChanestMetric {
    /// NMSE over the stacked direct/cascaded coefficient block.
    DgBlock = 0,
    /// NMSE on the recombined effective channel.
    Effective = 1,
}

impl From<MetricMode> for ChanestMetric {
    fn from(mode: MetricMode) -> Self {
        match mode {
            MetricMode::DgBlock => ChanestMetric::DgBlock,
            MetricMode::Effective => ChanestMetric::Effective,
        }
    }
}

impl From<ChanestMetric> for MetricMode {
    fn from(metric: ChanestMetric) -> Self {
        match metric {
            ChanestMetric::DgBlock => MetricMode::DgBlock,
            ChanestMetric::Effective => MetricMode::Effective,
        }
    }
}

/// One NMSE measurement, the C view of a CSV row. `estimator` is a
/// NUL-terminated name (with any sweep suffix, e.g. `ls@b3`).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ChanestRecord {
    pub estimator: [c_char; 32],
    pub snr_db: f64,
    /// 1-based user index.
    pub user: u32,
    pub trial: u64,
    pub metric: ChanestMetric,
    pub nmse: f64,
}

/// Opaque experiment configuration handle.
pub struct ChanestConfig {
    inner: ExperimentConfig,
}

/// Opaque result-set handle (sorted records plus aggregates).
pub struct ChanestResults {
    inner: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized: Vec<u8> = message.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: ChanestStatus, message: &str) -> ChanestStatus {
    set_last_error(message);
    status
}

fn fail_harness(e: &HarnessError) -> ChanestStatus {
    let status = if e.is_config_error() {
        ChanestStatus::ConfigError
    } else {
        ChanestStatus::RuntimeError
    };
    fail(status, &e.to_string())
}

/// Shield the C boundary from panics; a panic is reported as a status.
fn guarded(body: impl FnOnce() -> ChanestStatus) -> ChanestStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in chanest".to_string());
            fail(ChanestStatus::Panic, &msg)
        }
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, ChanestStatus> {
    if ptr.is_null() {
        return Err(fail(ChanestStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(ChanestStatus::InvalidString, "string argument is not UTF-8"))
}

/// Version of the underlying simulator crate, as a static NUL-terminated
/// string.
#[no_mangle]
pub extern "C" fn chanest_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the most recent error message of this thread into `buf` (always
/// NUL-terminated when `cap > 0`) and return the full message length in
/// bytes, excluding the terminator. Call with `buf = NULL` to query the
/// required capacity.
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn chanest_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// New config handle with the desk-scale preset. Never fails; free with
/// `chanest_config_free`.
#[no_mangle]
pub extern "C" fn chanest_config_desk() -> *mut ChanestConfig {
    Box::into_raw(Box::new(ChanestConfig {
        inner: ExperimentConfig::desk(),
    }))
}

/// New config handle with the full-scale preset. Never fails; free with
/// `chanest_config_free`.
#[no_mangle]
pub extern "C" fn chanest_config_paper() -> *mut ChanestConfig {
    Box::into_raw(Box::new(ChanestConfig {
        inner: ExperimentConfig::paper(),
    }))
}

/// New config handle from a config file applied on top of the desk preset.
/// On success `*out` owns the handle.
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer;
/// the returned handle must be released with `chanest_config_free`.
#[no_mangle]
pub unsafe extern "C" fn chanest_config_load(
    path: *const c_char,
    out: *mut *mut ChanestConfig,
) -> ChanestStatus {
    guarded(|| {
        if out.is_null() {
            return fail(ChanestStatus::NullArgument, "null output pointer");
        }
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match chanest::harness::read_config(path.as_ref()) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(ChanestConfig { inner: config }));
                ChanestStatus::Ok
            }
            Err(e) => fail_harness(&e),
        }
    })
}

/// Set one configuration entry. `key` and `value` follow the text config
/// format exactly (e.g. `snr_db` / `0,5,10,15`, `dip_schedule` / `2x5,1x1`).
/// # Safety
/// `config` must be a live handle from a `chanest_config_*` constructor;
/// `key` and `value` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn chanest_config_set(
    config: *mut ChanestConfig,
    key: *const c_char,
    value: *const c_char,
) -> ChanestStatus {
    guarded(|| {
        let Some(config) = config.as_mut() else {
            return fail(ChanestStatus::NullArgument, "null config handle");
        };
        let (key, value) = match (cstr_arg(key), cstr_arg(value)) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(status), _) | (_, Err(status)) => return status,
        };
        match apply_config_text(&mut config.inner, &format!("{key}={value}")) {
            Ok(()) => ChanestStatus::Ok,
            Err(e) => fail_harness(&e),
        }
    })
}

/// Cross-field validation of the whole config, the same check a run
/// performs first.
/// # Safety
/// `config` must be null or a live handle from a `chanest_config_*`
/// constructor.
#[no_mangle]
pub unsafe extern "C" fn chanest_config_validate(config: *const ChanestConfig) -> ChanestStatus {
    guarded(|| {
        let Some(config) = config.as_ref() else {
            return fail(ChanestStatus::NullArgument, "null config handle");
        };
        match config.inner.validate() {
            Ok(()) => ChanestStatus::Ok,
            Err(e) => fail_harness(&e),
        }
    })
}

/// Destroy a config handle. Null is a no-op.
/// # Safety
/// `config` must be null or a handle from a `chanest_config_*`
/// constructor, not freed before.
#[no_mangle]
pub unsafe extern "C" fn chanest_config_free(config: *mut ChanestConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run the configured experiment. On success `*out` owns a result set.
/// # Safety
/// `config` must be a live config handle and `out` a valid pointer; the
/// returned handle must be released with `chanest_results_free`.
#[no_mangle]
pub unsafe extern "C" fn chanest_run(
    config: *const ChanestConfig,
    out: *mut *mut ChanestResults,
) -> ChanestStatus {
    guarded(|| {
        let Some(config) = config.as_ref() else {
            return fail(ChanestStatus::NullArgument, "null config handle");
        };
        if out.is_null() {
            return fail(ChanestStatus::NullArgument, "null output pointer");
        }
        match run_experiment(&config.inner) {
            Ok(results) => {
                *out = Box::into_raw(Box::new(ChanestResults { inner: results }));
                ChanestStatus::Ok
            }
            Err(e) => fail_harness(&e),
        }
    })
}

/// Run the hardware-impairment sweep over `bits[0..bits_len]` plus the ideal
/// arm. On success `*out` owns a result set.
/// # Safety
/// `config` must be a live config handle, `bits` must point to `bits_len`
/// readable values, and `out` must be a valid pointer; the returned handle
/// must be released with `chanest_results_free`.
#[no_mangle]
pub unsafe extern "C" fn chanest_hwi_sweep(
    config: *const ChanestConfig,
    bits: *const u32,
    bits_len: usize,
    out: *mut *mut ChanestResults,
) -> ChanestStatus {
    guarded(|| {
        let Some(config) = config.as_ref() else {
            return fail(ChanestStatus::NullArgument, "null config handle");
        };
        if out.is_null() || (bits.is_null() && bits_len > 0) {
            return fail(ChanestStatus::NullArgument, "null output or bits pointer");
        }
        let bits = if bits_len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(bits, bits_len)
        };
        match run_hwi_sweep(&config.inner, bits) {
            Ok(results) => {
                *out = Box::into_raw(Box::new(ChanestResults { inner: results }));
                ChanestStatus::Ok
            }
            Err(e) => fail_harness(&e),
        }
    })
}

/// Number of NMSE records in a result set (0 for a null handle).
/// # Safety
/// `results` must be null or a live handle from `chanest_run` or
/// `chanest_hwi_sweep`.
/// # Safety
/// `results` must be a live results handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn chanest_results_record_count(results: *const ChanestResults) -> usize {
    match results.as_ref() {
        Some(r) => r.inner.records.len(),
        None => 0,
    }
}

/// Copy record `index` (records are in canonical CSV order) into `*out`.
/// # Safety
/// `results` must be a live results handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn chanest_results_record(
    results: *const ChanestResults,
    index: usize,
    out: *mut ChanestRecord,
) -> ChanestStatus {
    guarded(|| {
        let Some(results) = results.as_ref() else {
            return fail(ChanestStatus::NullArgument, "null results handle");
        };
        if out.is_null() {
            return fail(ChanestStatus::NullArgument, "null output pointer");
        }
        let Some(record) = results.inner.records.get(index) else {
            return fail(
                ChanestStatus::OutOfRange,
                &format!("record {index} of {}", results.inner.records.len()),
            );
        };
        let mut name = [0 as c_char; 32];
        for (dst, &src) in name.iter_mut().zip(record.estimator.as_bytes()) {
            *dst = src as c_char;
        }
        name[31] = 0;
        *out = ChanestRecord {
            estimator: name,
            snr_db: record.snr_db,
            user: record.user as u32,
            trial: record.trial as u64,
            metric: record.metric_mode.into(),
            nmse: record.nmse,
        };
        ChanestStatus::Ok
    })
}

/// Mean NMSE of one aggregate cell (estimator name including any sweep
/// suffix, SNR point, metric).
/// # Safety
/// `results` must be a live results handle, `estimator` a NUL-terminated
/// string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn chanest_results_mean_nmse(
    results: *const ChanestResults,
    estimator: *const c_char,
    snr_db: f64,
    metric: ChanestMetric,
    out: *mut f64,
) -> ChanestStatus {
    guarded(|| {
        let Some(results) = results.as_ref() else {
            return fail(ChanestStatus::NullArgument, "null results handle");
        };
        if out.is_null() {
            return fail(ChanestStatus::NullArgument, "null output pointer");
        }
        let name = match cstr_arg(estimator) {
            Ok(n) => n,
            Err(status) => return status,
        };
        match results.inner.mean_nmse(name, snr_db, metric.into()) {
            Some(mean) => {
                *out = mean;
                ChanestStatus::Ok
            }
            None => fail(
                ChanestStatus::NotFound,
                &format!("no aggregate for {name} at {snr_db} dB"),
            ),
        }
    })
}

/// Write the records as a CSV file (the same schema and canonical order the
/// CLI produces).
/// # Safety
/// `results` must be a live results handle and `path` a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn chanest_results_write_csv(
    results: *const ChanestResults,
    path: *const c_char,
) -> ChanestStatus {
    guarded(|| {
        let Some(results) = results.as_ref() else {
            return fail(ChanestStatus::NullArgument, "null results handle");
        };
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match write_csv(&results.inner.records, path.as_ref()) {
            Ok(()) => ChanestStatus::Ok,
            Err(e) => fail_harness(&e),
        }
    })
}

/// Destroy a result-set handle. Null is a no-op.
/// # Safety
/// `results` must be null or a handle from `chanest_run` or
/// `chanest_hwi_sweep`, not freed before.
#[no_mangle]
pub unsafe extern "C" fn chanest_results_free(results: *mut ChanestResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}
