//! C ABI over the `dglc` crate.
//!
//! Every function returns a [`DglcStatus`]. On failure the message is kept in
//! thread-local storage and can be read with [`dglc_last_error`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dglc::cli::{run_baseline, Method};
use dglc::graph::{parse_tudataset, GraphDataset};
use dglc::trainer::{train, TrainConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DglcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Training = 5,
    Panic = 6,
}

/// A loaded graph dataset.
pub struct DglcDataset {
    inner: GraphDataset,
}

/// Outcome of a training or baseline run.
pub struct DglcRunResult {
    acc: f64,
    nmi: f64,
    ari: f64,
    labels: Vec<usize>,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    let c = CString::new(text).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DglcStatus, message: impl Into<String>) -> DglcStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> DglcStatus) -> DglcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DglcStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DglcStatus> {
    if p.is_null() {
        return Err(fail(DglcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DglcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn dglc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads the TUDataset files `<dir>/<name>/<name>_*.txt`.
///
/// # Safety
/// `dir` and `name` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dglc_dataset_load(
    dir: *const c_char,
    name: *const c_char,
    out: *mut *mut DglcDataset,
) -> DglcStatus {
    guard(|| {
        if out.is_null() {
            return fail(DglcStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let (dir, name) = match (str_arg(dir, "dir"), str_arg(name, "name")) {
            (Ok(d), Ok(n)) => (d, n),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match parse_tudataset(Path::new(dir).join(name), name) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(DglcDataset { inner }));
                DglcStatus::Ok
            }
            Err(e) => {
                let status = if matches!(
                    e,
                    dglc::graph::GraphError::Io { .. } | dglc::graph::GraphError::MissingFile(_)
                ) {
                    DglcStatus::Io
                } else {
                    DglcStatus::Parse
                };
                fail(status, e.to_string())
            }
        }
    })
}

/// # Safety
/// `dataset` must come from [`dglc_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dglc_dataset_free(dataset: *mut DglcDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of graphs and of distinct graph classes.
///
/// # Safety
/// `dataset` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dglc_dataset_info(
    dataset: *const DglcDataset,
    graphs: *mut usize,
    classes: *mut usize,
) -> DglcStatus {
    guard(|| {
        if dataset.is_null() || graphs.is_null() || classes.is_null() {
            return fail(DglcStatus::NullPointer, "null argument");
        }
        let ds = &(*dataset).inner;
        *graphs = ds.len();
        *classes = ds.num_classes;
        DglcStatus::Ok
    })
}

fn finish(
    out: *mut *mut DglcRunResult,
    acc: f64,
    nmi: f64,
    ari: f64,
    labels: Vec<usize>,
    json: String,
) -> DglcStatus {
    let json = CString::new(json).expect("JSON has no NUL");
    // SAFETY: callers checked `out`.
    unsafe {
        *out = Box::into_raw(Box::new(DglcRunResult {
            acc,
            nmi,
            ari,
            labels,
            json,
        }));
    }
    DglcStatus::Ok
}

/// Trains a model. `config_json` may be null for defaults; otherwise it is a
/// JSON object with any of the training options.
///
/// # Safety
/// `dataset` must be a live handle, `config_json` null or NUL-terminated and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dglc_train(
    dataset: *const DglcDataset,
    config_json: *const c_char,
    out: *mut *mut DglcRunResult,
) -> DglcStatus {
    guard(|| {
        if dataset.is_null() || out.is_null() {
            return fail(DglcStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let config: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            let text = match str_arg(config_json, "config_json") {
                Ok(t) => t,
                Err(s) => return s,
            };
            match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => return fail(DglcStatus::Parse, format!("config: {e}")),
            }
        };
        if let Err(e) = config.validate() {
            return fail(DglcStatus::InvalidArgument, e.to_string());
        }
        match train(&(*dataset).inner, &config) {
            Ok(r) => {
                let json = serde_json::to_string(&r).expect("serializable");
                finish(out, r.acc, r.nmi, r.ari, r.labels, json)
            }
            Err(e) => fail(DglcStatus::Training, e.to_string()),
        }
    })
}

/// Runs a kernel baseline; `method` is one of `wl+sc`, `sp+sc`, `wl+km`,
/// `sp+km`.
///
/// # Safety
/// `dataset` must be a live handle, `method` NUL-terminated and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dglc_baseline(
    dataset: *const DglcDataset,
    method: *const c_char,
    seed: u64,
    out: *mut *mut DglcRunResult,
) -> DglcStatus {
    guard(|| {
        if dataset.is_null() || out.is_null() {
            return fail(DglcStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let name = match str_arg(method, "method") {
            Ok(m) => m,
            Err(s) => return s,
        };
        let method: Method = match serde_json::from_value(serde_json::Value::String(name.into())) {
            Ok(m) => m,
            Err(_) => {
                return fail(
                    DglcStatus::InvalidArgument,
                    format!("unknown method {name:?}"),
                )
            }
        };
        match run_baseline(&(*dataset).inner, method, seed) {
            Ok((r, _)) => {
                let json = serde_json::to_string(&r).expect("serializable");
                finish(out, r.acc, r.nmi, r.ari, r.labels, json)
            }
            Err(e) => fail(DglcStatus::Training, e.to_string()),
        }
    })
}

/// # Safety
/// `result` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dglc_result_metrics(
    result: *const DglcRunResult,
    acc: *mut f64,
    nmi: *mut f64,
    ari: *mut f64,
) -> DglcStatus {
    guard(|| {
        if result.is_null() || acc.is_null() || nmi.is_null() || ari.is_null() {
            return fail(DglcStatus::NullPointer, "null argument");
        }
        let r = &*result;
        *acc = r.acc;
        *nmi = r.nmi;
        *ari = r.ari;
        DglcStatus::Ok
    })
}

/// Copies up to `capacity` cluster labels into `buf` and stores the total
/// count in `len`. Pass a null `buf` to query the count only.
///
/// # Safety
/// `result` must be a live handle, `len` writable and `buf` null or valid for
/// `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn dglc_result_labels(
    result: *const DglcRunResult,
    buf: *mut usize,
    capacity: usize,
    len: *mut usize,
) -> DglcStatus {
    guard(|| {
        if result.is_null() || len.is_null() {
            return fail(DglcStatus::NullPointer, "null argument");
        }
        let labels = &(*result).labels;
        *len = labels.len();
        if !buf.is_null() {
            let n = capacity.min(labels.len());
            ptr::copy_nonoverlapping(labels.as_ptr(), buf, n);
        }
        DglcStatus::Ok
    })
}

/// Full result as JSON. The string is owned by `result`.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dglc_result_json(result: *const DglcRunResult) -> *const c_char {
    if result.is_null() {
        set_error("result is null");
        return ptr::null();
    }
    (*result).json.as_ptr()
}

/// # Safety
/// `result` must come from [`dglc_train`] or [`dglc_baseline`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn dglc_result_free(result: *mut DglcRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
