//! C ABI over the detector.
//!
//! Every function returns a [`StmtvdStatus`]. On failure the message is
//! available from [`stmtvd_last_error`] on the same thread. Strings handed
//! out by this library must be released with [`stmtvd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stmtvd::codegraph::build_graph_builtin;
use stmtvd::corpus::{ingest_reader, strip_comments};
use stmtvd::gnn::{Checkpoint, ModelError};
use stmtvd::labeler::{label_sample, DepDirection};
use stmtvd::metrics::{roc_auc, wilcoxon_signed_rank};
use stmtvd::pipeline::{load_predictor, predict_function, Featurizer, PipelineError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmtvdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    Panic = 5,
}

/// Which side of an added line counts as dependent when labeling.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmtvdDirection {
    Out = 0,
    In = 1,
    Both = 2,
}

/// A loaded checkpoint with its featurizer. Opaque to C.
pub struct StmtvdModel {
    checkpoint: Checkpoint,
    featurizer: Featurizer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(StmtvdStatus, String);

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Failure(StmtvdStatus::InvalidInput, msg.into())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::MissingArtifact(_) | PipelineError::Io { .. } | PipelineError::Model(ModelError::Io(_)) => {
                StmtvdStatus::Io
            }
            _ => StmtvdStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, record its error and convert panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StmtvdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StmtvdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            StmtvdStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(StmtvdStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(StmtvdStatus::InvalidUtf8, format!("{what} is not UTF-8: {e}")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(StmtvdStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(StmtvdStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(StmtvdStatus::NullPointer, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|_| Failure::input("result contains a NUL byte"))?;
    out.write(c.into_raw());
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn stmtvd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stmtvd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn stmtvd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a checkpoint written by `stmtvd train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmtvd_model_load(path: *const c_char, out: *mut *mut StmtvdModel) -> StmtvdStatus {
    guard(|| {
        let path = text(path, "path")?;
        if out.is_null() {
            return Err(Failure(StmtvdStatus::NullPointer, "out is null".into()));
        }
        let (checkpoint, featurizer) = load_predictor(Path::new(path))?;
        out.write(Box::into_raw(Box::new(StmtvdModel { checkpoint, featurizer })));
        Ok(())
    })
}

/// Free a model. NULL is ignored.
///
/// # Safety
/// `model` must come from `stmtvd_model_load` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn stmtvd_model_free(model: *mut StmtvdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Decision threshold stored with the model.
///
/// # Safety
/// `model` must be a live model; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmtvd_model_threshold(model: *const StmtvdModel, out: *mut f64) -> StmtvdStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure(StmtvdStatus::NullPointer, "model is null".into()))?;
        write(out, m.checkpoint.threshold, "out")
    })
}

/// Score every statement of one C function. Writes the prediction record as
/// JSON to `*out_json`.
///
/// # Safety
/// `model` must be a live model, the strings NUL-terminated and `out_json`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn stmtvd_predict(
    model: *const StmtvdModel,
    function_id: *const c_char,
    code: *const c_char,
    top_k: usize,
    out_json: *mut *mut c_char,
) -> StmtvdStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure(StmtvdStatus::NullPointer, "model is null".into()))?;
        let id = text(function_id, "function_id")?;
        let code = text(code, "code")?;
        let rec = predict_function(&m.checkpoint, &m.featurizer, id, code, top_k)?;
        write_string(out_json, json(&rec))
    })
}

/// Statement graph of one function as JSON.
///
/// # Safety
/// Strings must be NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn stmtvd_build_graph(
    function_id: *const c_char,
    code: *const c_char,
    out_json: *mut *mut c_char,
) -> StmtvdStatus {
    guard(|| {
        let id = text(function_id, "function_id")?;
        let code = text(code, "code")?;
        write_string(out_json, json(&build_graph_builtin(id, &strip_comments(code))))
    })
}

/// Label one dataset row (the JSON object format read by `stmtvd ingest`).
/// Writes the label record as JSON.
///
/// # Safety
/// `row_json` must be NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn stmtvd_label_sample(
    row_json: *const c_char,
    direction: StmtvdDirection,
    out_json: *mut *mut c_char,
) -> StmtvdStatus {
    guard(|| {
        let row = text(row_json, "row_json")?;
        let mut samples = ingest_reader(row.as_bytes()).map_err(|e| Failure::input(e.to_string()))?;
        if samples.len() != 1 {
            return Err(Failure::input(format!("expected one row, got {}", samples.len())));
        }
        let direction = match direction {
            StmtvdDirection::Out => DepDirection::Out,
            StmtvdDirection::In => DepDirection::In,
            StmtvdDirection::Both => DepDirection::Both,
        };
        let labeled = label_sample(&samples.remove(0), direction);
        write_string(out_json, json(&labeled.labels.to_record()))
    })
}

/// Blank out comments, keeping every line and column in place.
///
/// # Safety
/// `code` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn stmtvd_strip_comments(code: *const c_char, out: *mut *mut c_char) -> StmtvdStatus {
    guard(|| write_string(out, strip_comments(text(code, "code")?)))
}

/// Two-sided signed-rank test on `n` pairs.
///
/// # Safety
/// `a` and `b` must point to `n` doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmtvd_wilcoxon(
    a: *const f64,
    b: *const f64,
    n: usize,
    statistic: *mut f64,
    p_value: *mut f64,
) -> StmtvdStatus {
    guard(|| {
        let (a, b) = (slice(a, n, "a")?, slice(b, n, "b")?);
        if statistic.is_null() || p_value.is_null() {
            return Err(Failure(StmtvdStatus::NullPointer, "output pointer is null".into()));
        }
        let r = wilcoxon_signed_rank(a, b).map_err(|e| Failure::input(e.to_string()))?;
        write(statistic, r.statistic, "statistic")?;
        write(p_value, r.p_value, "p_value")
    })
}

/// Area under the ROC curve. `labels` holds 0 or 1.
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn stmtvd_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> StmtvdStatus {
    guard(|| {
        let (s, l) = (slice(scores, n, "scores")?, slice(labels, n, "labels")?);
        let auc = roc_auc(s, l).map_err(|e| Failure::input(e.to_string()))?;
        write(out, auc, "out")
    })
}
