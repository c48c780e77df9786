//! C ABI for embedding trained models in other runtimes: load a checkpoint,
//! classify series, extract pooled representations.
//!
//! Conventions:
//! - Every fallible call returns a [`CrtStatus`]; `CRT_STATUS_OK` is zero.
//! - On failure a thread-local message is readable via [`crt_last_error`]
//!   until the next failing call on the same thread.
//! - Handles are opaque; free them with [`crt_model_free`]. Strings returned
//!   as `char*` are owned by the caller and freed with [`crt_string_free`].
//! - All entry points catch panics and convert them to `CRT_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use crt_core::checkpoint;
use crt_core::model::CrtModel;
use crt_core::tensor::Tensor;
use crt_core::CrtError;

/// Result of every fallible FFI call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CrtStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// Sizes or values incompatible with the model.
    InvalidArgument = 3,
    /// The input data was malformed.
    Data = 4,
    /// The checkpoint file was unreadable or inconsistent.
    Checkpoint = 5,
    /// Filesystem failure.
    Io = 6,
    /// A bug: an internal panic was caught.
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn fail(e: &CrtError) -> CrtStatus {
    set_error(&e.to_string());
    match e {
        CrtError::ShapeMismatch { .. } | CrtError::InvalidArgument { .. } | CrtError::Config(_) => {
            CrtStatus::InvalidArgument
        }
        CrtError::Data(_) | CrtError::Parse { .. } | CrtError::NonFinite { .. } => CrtStatus::Data,
        CrtError::CheckpointVersion { .. }
        | CrtError::CheckpointShape(_)
        | CrtError::CheckpointTruncated { .. } => CrtStatus::Checkpoint,
        CrtError::Io(_) => CrtStatus::Io,
        CrtError::Json(_) => CrtStatus::Checkpoint,
        CrtError::Audit(_) => CrtStatus::Internal,
    }
}

/// Runs `f` with panics converted to `CRT_STATUS_INTERNAL`.
fn guarded(f: impl FnOnce() -> CrtStatus) -> CrtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            CrtStatus::Internal
        }
    }
}

/// A loaded model plus the checkpoint bookkeeping it was restored with.
pub struct CrtModelHandle {
    model: CrtModel,
    epoch: usize,
    seed: u64,
}

/// Library version as a static string; never freed.
#[no_mangle]
pub extern "C" fn crt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn crt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint from `path` into a new handle written to `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crt_model_load(
    path: *const c_char,
    out: *mut *mut CrtModelHandle,
) -> CrtStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            set_error("crt_model_load: null argument");
            return CrtStatus::NullArgument;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("crt_model_load: path is not valid UTF-8");
                return CrtStatus::Utf8;
            }
        };
        match checkpoint::load(Path::new(path)) {
            Ok((model, meta)) => {
                let handle =
                    Box::new(CrtModelHandle { model, epoch: meta.epoch, seed: meta.seed });
                unsafe { *out = Box::into_raw(handle) };
                CrtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Frees a handle; a null argument is a no-op.
///
/// # Safety
/// `model` must have come from [`crt_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn crt_model_free(model: *mut CrtModelHandle) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Full model configuration as a JSON string owned by the caller
/// (free with [`crt_string_free`]); null if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn crt_model_config_json(model: *const CrtModelHandle) -> *mut c_char {
    let Some(h) = (unsafe { model.as_ref() }) else {
        set_error("crt_model_config_json: null model");
        return ptr::null_mut();
    };
    let json = serde_json::json!({
        "model": h.model.cfg,
        "epoch": h.epoch,
        "seed": h.seed,
    });
    match CString::new(json.to_string()) {
        Ok(s) => s.into_raw(),
        Err(_) => ptr::null_mut(),
    }
}

/// Frees a string returned by this library; a null argument is a no-op.
///
/// # Safety
/// `s` must have been returned by this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn crt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Representation width; 0 if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn crt_model_dim(model: *const CrtModelHandle) -> usize {
    unsafe { model.as_ref() }.map_or(0, |h| h.model.cfg.dim)
}

/// Number of classifier outputs; 0 if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn crt_model_num_classes(model: *const CrtModelHandle) -> usize {
    unsafe { model.as_ref() }.map_or(0, |h| h.model.cfg.num_classes)
}

/// Channels each input series must have; 0 if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn crt_model_channels(model: *const CrtModelHandle) -> usize {
    unsafe { model.as_ref() }.map_or(0, |h| h.model.cfg.channels)
}

/// Patch length the model was built with; series lengths must be divisible
/// by it in both time and half-spectrum views. 0 if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn crt_model_patch_len(model: *const CrtModelHandle) -> usize {
    unsafe { model.as_ref() }.map_or(0, |h| h.model.cfg.patch_len)
}

unsafe fn series_from_raw(
    h: &CrtModelHandle,
    values: *const f64,
    channels: usize,
    length: usize,
) -> Result<Tensor, CrtStatus> {
    if values.is_null() {
        set_error("null values pointer");
        return Err(CrtStatus::NullArgument);
    }
    if channels != h.model.cfg.channels {
        set_error(&format!(
            "series has {channels} channels, model expects {}",
            h.model.cfg.channels
        ));
        return Err(CrtStatus::InvalidArgument);
    }
    if length == 0 {
        set_error("series length is zero");
        return Err(CrtStatus::InvalidArgument);
    }
    let data = unsafe { std::slice::from_raw_parts(values, channels * length) };
    Tensor::new(vec![channels, length], data.to_vec()).map_err(|e| fail(&e))
}

/// Classifies one series laid out row-major as (channels, length); writes
/// softmax scores into `scores`, whose capacity `scores_len` must equal the
/// model's class count.
///
/// # Safety
/// `values` must hold `channels * length` doubles; `scores` must hold
/// `scores_len` doubles; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn crt_classify(
    model: *const CrtModelHandle,
    values: *const f64,
    channels: usize,
    length: usize,
    scores: *mut f64,
    scores_len: usize,
) -> CrtStatus {
    guarded(|| {
        let Some(h) = (unsafe { model.as_ref() }) else {
            set_error("crt_classify: null model");
            return CrtStatus::NullArgument;
        };
        if scores.is_null() {
            set_error("crt_classify: null scores pointer");
            return CrtStatus::NullArgument;
        }
        if scores_len != h.model.cfg.num_classes {
            set_error(&format!(
                "scores_len {scores_len} != num_classes {}",
                h.model.cfg.num_classes
            ));
            return CrtStatus::InvalidArgument;
        }
        let series = match unsafe { series_from_raw(h, values, channels, length) } {
            Ok(t) => t,
            Err(s) => return s,
        };
        match h.model.score_series(&series) {
            Ok(row) => {
                unsafe { std::slice::from_raw_parts_mut(scores, scores_len) }
                    .copy_from_slice(&row);
                CrtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes the pooled cross-domain representation of one series into `out`,
/// whose capacity `out_len` must equal the model's representation width.
///
/// # Safety
/// `values` must hold `channels * length` doubles; `out` must hold `out_len`
/// doubles; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn crt_embed(
    model: *const CrtModelHandle,
    values: *const f64,
    channels: usize,
    length: usize,
    out: *mut f64,
    out_len: usize,
) -> CrtStatus {
    guarded(|| {
        let Some(h) = (unsafe { model.as_ref() }) else {
            set_error("crt_embed: null model");
            return CrtStatus::NullArgument;
        };
        if out.is_null() {
            set_error("crt_embed: null output pointer");
            return CrtStatus::NullArgument;
        }
        if out_len != h.model.cfg.dim {
            set_error(&format!("out_len {out_len} != dim {}", h.model.cfg.dim));
            return CrtStatus::InvalidArgument;
        }
        let series = match unsafe { series_from_raw(h, values, channels, length) } {
            Ok(t) => t,
            Err(s) => return s,
        };
        match h.model.embed_series(&series) {
            Ok(repr) => {
                unsafe { std::slice::from_raw_parts_mut(out, out_len) }.copy_from_slice(&repr);
                CrtStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
