//! C ABI over `dse-core`: load a checkpoint, embed text, compare embeddings.
//!
//! Every fallible function returns a [`DseStatus`]. On failure the message
//! is kept per thread and read with [`dse_last_error_message`]. Models are
//! opaque handles created by [`dse_model_load`] and released with
//! [`dse_model_free`]. A handle may be shared between threads for reads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dse_core::encoder::{EncoderModel, Embedder};
use dse_core::loss::cosine_sim;
use dse_core::trainer::load_checkpoint;
use dse_core::DseError;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DseStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    BufferTooSmall = 5,
    InvalidInput = 6,
    Panic = 7,
}

/// A loaded encoder.
pub struct DseModel {
    inner: EncoderModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: DseStatus, msg: impl Into<String>) -> DseStatus {
    set_error(msg);
    status
}

fn from_core(e: DseError) -> DseStatus {
    let status = match &e {
        DseError::Io { .. } => DseStatus::Io,
        DseError::Checkpoint { .. } => DseStatus::Checkpoint,
        _ => DseStatus::InvalidInput,
    };
    fail(status, e.to_string())
}

fn guarded(f: impl FnOnce() -> DseStatus) -> DseStatus {
    clear_error();
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(DseStatus::Panic, "internal panic"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, DseStatus> {
    if p.is_null() {
        return Err(fail(DseStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DseStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// Load a checkpoint. On success `*out` receives a handle owned by the
/// caller; on failure it is set to null.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dse_model_load(path: *const c_char, out: *mut *mut DseModel) -> DseStatus {
    guarded(|| {
        if out.is_null() {
            return fail(DseStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(path) {
            Ok(ck) => {
                *out = Box::into_raw(Box::new(DseModel { inner: ck.model }));
                DseStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`dse_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dse_model_free(model: *mut DseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the embeddings produced by [`dse_embed_text`], or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dse_model_embed_dim(model: *const DseModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.embed_dim)
}

/// Embed one text (mean-pooled view) into `out[0..dim]`. `out_len` must be
/// at least [`dse_model_embed_dim`].
///
/// # Safety
/// `model` must be a live handle, `text` NUL-terminated and `out` valid for
/// `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn dse_embed_text(
    model: *const DseModel,
    text: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> DseStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return fail(DseStatus::NullArgument, "model is null");
        };
        if out.is_null() {
            return fail(DseStatus::NullArgument, "out is null");
        }
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let dim = model.inner.config.embed_dim;
        if out_len < dim {
            return fail(
                DseStatus::BufferTooSmall,
                format!("output buffer holds {out_len} values, need {dim}"),
            );
        }
        match model.inner.embed(&[text]) {
            Ok(batch) => {
                std::slice::from_raw_parts_mut(out, dim).copy_from_slice(batch.row(0));
                DseStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Cosine similarity of two vectors of length `len`, written to `*out`.
///
/// # Safety
/// `a` and `b` must be valid for `len` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn dse_cosine(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> DseStatus {
    guarded(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(DseStatus::NullArgument, "a, b and out must be non-null");
        }
        let (a, b) = (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len));
        *out = cosine_sim(a, b, 1e-12);
        DseStatus::Ok
    })
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dse_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
