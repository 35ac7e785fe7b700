//! C ABI over the proxkit core.
//!
//! Conventions:
//! - every fallible function returns a [`ProxStatus`]; results go through
//!   out-pointers, which are only written on success;
//! - on failure a message is kept per thread and read with
//!   [`prox_last_error_message`];
//! - handles are opaque, created by `*_parse`/`*_compute` functions and
//!   released by the matching `*_free`; strings returned through `char**`
//!   are released with [`prox_string_free`];
//! - panics never cross the boundary; they surface as `PROX_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use proxkit::metrics::{session_metrics, write_metrics_csv, MetricsConfig, MetricsRow};
use proxkit::model::{parse_annotation_file, parse_sidecar, validate_annotation_set, write_annotation_file, AnnotationSet, Slice, Zone};
use proxkit::reliability::{reliability_report, PairedLabels};
use proxkit::stats;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    InvalidData = 5,
    ComputeError = 6,
    Panic = 99,
}

/// Parsed annotation file.
pub struct ProxAnnotationSet {
    inner: AnnotationSet,
}

/// Per-track metrics of one coder/pass slice.
pub struct ProxMetrics {
    rows: Vec<MetricsRow>,
    track_ids: Vec<CString>,
}

/// Metrics of one track, zone shares in [0, 1].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProxTrackMetrics {
    pub intimate: f64,
    pub personal: f64,
    pub social: f64,
    pub offscreen: f64,
    /// Zone code: 'i', 'p' or 's'.
    pub predominant: c_char,
    pub zone_transitions: u64,
    pub raw_changes: u64,
    pub on_grid_frames: u64,
    pub total_frames: u64,
    pub observed_seconds: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (ProxStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ProxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ProxStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ProxStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (ProxStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (ProxStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, value: T) {
    ptr::write(out, value);
}

fn into_c_string(bytes: Vec<u8>) -> Result<*mut c_char, Failure> {
    CString::new(bytes)
        .map(CString::into_raw)
        .map_err(|_| (ProxStatus::InvalidData, "output contains a nul byte".into()))
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next proxkit call on the same thread.
#[no_mangle]
pub extern "C" fn prox_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn prox_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn prox_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses an annotation CSV (`csv`, `csv_len` bytes) with its sidecar
/// text (NUL-terminated).
///
/// # Safety
/// Pointers must be valid for the given lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prox_annotation_set_parse(
    csv: *const u8,
    csv_len: usize,
    sidecar: *const c_char,
    out: *mut *mut ProxAnnotationSet,
) -> ProxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let bytes = slice_arg(csv, csv_len, "csv")?;
        let sidecar = parse_sidecar(str_arg(sidecar, "sidecar")?).map_err(|e| (ProxStatus::ParseError, format!("sidecar: {e}")))?;
        let set = parse_annotation_file(bytes, &sidecar.meta).map_err(|e| (ProxStatus::ParseError, e.to_string()))?;
        put(out, Box::into_raw(Box::new(ProxAnnotationSet { inner: set })));
        Ok(())
    })
}

/// # Safety
/// `set` must come from [`prox_annotation_set_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn prox_annotation_set_free(set: *mut ProxAnnotationSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prox_annotation_set_record_count(set: *const ProxAnnotationSet, out: *mut usize) -> ProxStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, set.inner.records.len());
        Ok(())
    })
}

/// Writes the number of validation errors to `out_errors`. Returns
/// `PROX_STATUS_INVALID_DATA` with the first issue as message when there
/// are any.
///
/// # Safety
/// `set` must be a live handle; `out_errors` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prox_annotation_set_validate(set: *const ProxAnnotationSet, out_errors: *mut usize) -> ProxStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        if out_errors.is_null() {
            return Err(null("out_errors"));
        }
        let report = validate_annotation_set(&set.inner);
        put(out_errors, report.errors.len());
        match report.errors.first() {
            Some(first) => Err((ProxStatus::InvalidData, first.to_string())),
            None => Ok(()),
        }
    })
}

/// Canonical CSV text of the set. Free with [`prox_string_free`].
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prox_annotation_set_write(set: *const ProxAnnotationSet, out: *mut *mut c_char) -> ProxStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let bytes = write_annotation_file(&set.inner).map_err(|e| (ProxStatus::InvalidData, e.to_string()))?;
        put(out, into_c_string(bytes)?);
        Ok(())
    })
}

/// Metrics for one `coder`/`pass` slice with the default pipeline
/// settings (leading off-screen trimmed, window-3 smoothing).
///
/// # Safety
/// `set` must be a live handle, `coder` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn prox_metrics_compute(
    set: *const ProxAnnotationSet,
    coder: *const c_char,
    pass: u32,
    out: *mut *mut ProxMetrics,
) -> ProxStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let coder = str_arg(coder, "coder")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let slice: Slice = format!("{coder}:{pass}").parse().map_err(|e: String| (ProxStatus::InvalidArgument, e))?;
        let sm = session_metrics(&set.inner, &slice, &MetricsConfig::default())
            .map_err(|e| (ProxStatus::ComputeError, e.to_string()))?;
        let rows = sm.rows();
        let track_ids = rows
            .iter()
            .map(|r| CString::new(r.track_id.clone()).expect("track ids are tokens"))
            .collect();
        put(out, Box::into_raw(Box::new(ProxMetrics { rows, track_ids })));
        Ok(())
    })
}

/// # Safety
/// `metrics` must come from [`prox_metrics_compute`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn prox_metrics_free(metrics: *mut ProxMetrics) {
    if !metrics.is_null() {
        drop(Box::from_raw(metrics));
    }
}

/// Number of tracks with metrics; 0 for NULL.
///
/// # Safety
/// `metrics` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn prox_metrics_len(metrics: *const ProxMetrics) -> usize {
    metrics.as_ref().map_or(0, |m| m.rows.len())
}

/// Track id of row `index`, owned by the handle; NULL when out of range.
///
/// # Safety
/// `metrics` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn prox_metrics_track_id(metrics: *const ProxMetrics, index: usize) -> *const c_char {
    metrics
        .as_ref()
        .and_then(|m| m.track_ids.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// # Safety
/// `metrics` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prox_metrics_get(metrics: *const ProxMetrics, index: usize, out: *mut ProxTrackMetrics) -> ProxStatus {
    guard(|| {
        let m = metrics.as_ref().ok_or_else(|| null("metrics"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = m
            .rows
            .get(index)
            .ok_or_else(|| (ProxStatus::InvalidArgument, format!("index {index} out of range")))?;
        put(
            out,
            ProxTrackMetrics {
                intimate: r.intimate,
                personal: r.personal,
                social: r.social,
                offscreen: r.offscreen,
                predominant: r.predominant.code() as c_char,
                zone_transitions: r.zone_transitions,
                raw_changes: r.raw_changes,
                on_grid_frames: r.on_grid_frames,
                total_frames: r.total_frames,
                observed_seconds: r.observed_seconds,
            },
        );
        Ok(())
    })
}

/// Metrics as CSV text. Free with [`prox_string_free`].
///
/// # Safety
/// `metrics` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prox_metrics_write_csv(metrics: *const ProxMetrics, out: *mut *mut c_char) -> ProxStatus {
    guard(|| {
        let m = metrics.as_ref().ok_or_else(|| null("metrics"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &m.rows).map_err(|e| (ProxStatus::ComputeError, e.to_string()))?;
        put(out, into_c_string(buf)?);
        Ok(())
    })
}

fn zones(codes: &[u8], what: &str) -> Result<Vec<Zone>, Failure> {
    codes
        .iter()
        .map(|&c| Zone::from_code(c as char).map_err(|e| (ProxStatus::InvalidArgument, format!("{what}: {e}"))))
        .collect()
}

/// Cohen's kappa and percent agreement of two aligned label sequences
/// given as zone-code bytes (`i`, `p`, `s`, `x`).
///
/// # Safety
/// `a` and `b` must hold `len` bytes; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn prox_kappa(
    a: *const u8,
    b: *const u8,
    len: usize,
    out_kappa: *mut f64,
    out_agreement: *mut f64,
) -> ProxStatus {
    guard(|| {
        let za = zones(slice_arg(a, len, "a")?, "a")?;
        let zb = zones(slice_arg(b, len, "b")?, "b")?;
        if out_kappa.is_null() || out_agreement.is_null() {
            return Err(null("output"));
        }
        let pairs = PairedLabels::from_pairs(za.into_iter().zip(zb).collect());
        let r = reliability_report(&pairs).map_err(|e| (ProxStatus::ComputeError, e.to_string()))?;
        put(out_kappa, r.kappa);
        put(out_agreement, r.percent_agreement);
        Ok(())
    })
}

/// Pearson and Spearman correlation of two columns of `len` values.
///
/// # Safety
/// `x` and `y` must hold `len` values; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn prox_correlate(
    x: *const f64,
    y: *const f64,
    len: usize,
    out_pearson: *mut f64,
    out_spearman: *mut f64,
) -> ProxStatus {
    guard(|| {
        let (x, y) = (slice_arg(x, len, "x")?, slice_arg(y, len, "y")?);
        if out_pearson.is_null() || out_spearman.is_null() {
            return Err(null("output"));
        }
        let c = stats::correlate(x, y).map_err(|e| (ProxStatus::ComputeError, e.to_string()))?;
        put(out_pearson, c.pearson_r);
        put(out_spearman, c.spearman_rho);
        Ok(())
    })
}

/// Z-scores of `len` values (sample standard deviation) into `out`,
/// which must hold `len` values.
///
/// # Safety
/// `x` and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn prox_z_standardize(x: *const f64, len: usize, out: *mut f64) -> ProxStatus {
    guard(|| {
        let xs = slice_arg(x, len, "x")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let z = stats::z_standardize(xs).map_err(|e| (ProxStatus::ComputeError, e.to_string()))?;
        ptr::copy_nonoverlapping(z.as_ptr(), out, len);
        Ok(())
    })
}
