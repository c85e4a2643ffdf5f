//! C ABI over the patchrnn classifier.
//!
//! Every fallible call returns a [`PrnnStatus`]. On failure a description is
//! available from [`prnn_last_error`] on the same thread until the next call.
//! Strings handed out by this library must be released with [`prnn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use patchrnn::eval::{compute_metrics, ConfusionMatrix};
use patchrnn::model::PatchRnn;
use patchrnn::patch::{parse_patch_bytes, Label};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrnnStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    Parse = 5,
    Model = 6,
    InvalidArgument = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrnnLabel {
    NonSecurity = 0,
    Security = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrnnPrediction {
    pub label: PrnnLabel,
    /// Probability of the security class.
    pub probability: f64,
}

/// Undefined ratios (zero denominators) are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrnnMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Opaque model handle.
pub struct PrnnModel {
    inner: PatchRnn,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: PrnnStatus, msg: impl Display) -> PrnnStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PrnnStatus) -> PrnnStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(PrnnStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, PrnnStatus> {
    if p.is_null() {
        return Err(fail(PrnnStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(PrnnStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn give_string(s: String, out: *mut *mut c_char) -> PrnnStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            PrnnStatus::Ok
        }
        Err(e) => fail(PrnnStatus::InvalidArgument, e),
    }
}

/// Message of the last failed call on this thread, or NULL.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn prnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a checkpoint from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn prnn_model_load(
    path: *const c_char,
    out: *mut *mut PrnnModel,
) -> PrnnStatus {
    guard(|| {
        if out.is_null() {
            return fail(PrnnStatus::NullArgument, "out is NULL");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        if !Path::new(path).exists() {
            return fail(PrnnStatus::Io, format!("{path} does not exist"));
        }
        match PatchRnn::load(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(PrnnModel { inner }));
                PrnnStatus::Ok
            }
            Err(e) => fail(PrnnStatus::Checkpoint, format!("{path}: {e}")),
        }
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must come from [`prnn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn prnn_model_free(model: *mut PrnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Version string `patchrnn-<version>+<fingerprint>` of a loaded model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn prnn_model_version(
    model: *const PrnnModel,
    out: *mut *mut c_char,
) -> PrnnStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(PrnnStatus::NullArgument, "model or out is NULL");
        }
        give_string((*model).inner.version(), out)
    })
}

/// Classify one patch given as `len` bytes of `git format-patch` text.
///
/// # Safety
/// `model` must be a live handle, `patch` must point to `len` readable bytes,
/// and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn prnn_predict(
    model: *const PrnnModel,
    patch: *const u8,
    len: usize,
    out: *mut PrnnPrediction,
) -> PrnnStatus {
    guard(|| {
        if model.is_null() || patch.is_null() || out.is_null() {
            return fail(PrnnStatus::NullArgument, "model, patch or out is NULL");
        }
        let bytes = std::slice::from_raw_parts(patch, len);
        let parsed = match parse_patch_bytes(bytes) {
            Ok(p) => p,
            Err(e) => return fail(PrnnStatus::Parse, e),
        };
        match (*model).inner.predict(&parsed) {
            Ok(p) => {
                *out = PrnnPrediction {
                    label: match p.label {
                        Label::Security => PrnnLabel::Security,
                        Label::NonSecurity => PrnnLabel::NonSecurity,
                    },
                    probability: p.probability,
                };
                PrnnStatus::Ok
            }
            Err(e) => fail(PrnnStatus::Model, e),
        }
    })
}

/// Tokenize C/C++ source: one `kind<TAB>text` line per token.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn prnn_lex(source: *const c_char, out: *mut *mut c_char) -> PrnnStatus {
    guard(|| {
        if out.is_null() {
            return fail(PrnnStatus::NullArgument, "out is NULL");
        }
        let src = match str_arg(source, "source") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let mut text = String::new();
        for t in patchrnn::lexer::lex(src) {
            text.push_str(t.kind.name());
            text.push('\t');
            text.push_str(&t.text);
            text.push('\n');
        }
        give_string(text, out)
    })
}

/// Commit message to space-separated stems.
///
/// # Safety
/// `message` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn prnn_message_stems(
    message: *const c_char,
    out: *mut *mut c_char,
) -> PrnnStatus {
    guard(|| {
        if out.is_null() {
            return fail(PrnnStatus::NullArgument, "out is NULL");
        }
        match str_arg(message, "message") {
            Ok(m) => give_string(patchrnn::message::message_stems(m).join(" "), out),
            Err(s) => s,
        }
    })
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn prnn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Rates of a confusion matrix.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn prnn_compute_metrics(
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
    out: *mut PrnnMetrics,
) -> PrnnStatus {
    guard(|| {
        if out.is_null() {
            return fail(PrnnStatus::NullArgument, "out is NULL");
        }
        match compute_metrics(&ConfusionMatrix::new(tp, fp, tn, fn_)) {
            Ok(m) => {
                *out = PrnnMetrics {
                    accuracy: m.accuracy,
                    precision: m.precision.unwrap_or(f64::NAN),
                    recall: m.recall.unwrap_or(f64::NAN),
                    f1: m.f1.unwrap_or(f64::NAN),
                    fpr: m.fpr.unwrap_or(f64::NAN),
                    fnr: m.fnr.unwrap_or(f64::NAN),
                };
                PrnnStatus::Ok
            }
            Err(e) => fail(PrnnStatus::InvalidArgument, e),
        }
    })
}
