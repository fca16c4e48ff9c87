//! C ABI over a trained forecaster: load a checkpoint, query its layout and
//! produce raw-scale forecasts.
//!
//! Every function returns a [`FastStatus`]; on failure the message is
//! available from [`fast_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fast_core::numerics::Tensor;
use fast_core::{FastError, FastModel};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FastStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Config = 5,
    Numeric = 6,
    Panic = 7,
}

/// A loaded model. Opaque to C callers.
pub struct FastModelHandle {
    model: FastModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &FastError) -> FastStatus {
    match err {
        FastError::Io { .. } => FastStatus::Io,
        FastError::Checkpoint(_) => FastStatus::Checkpoint,
        FastError::Numeric(_) | FastError::UndefinedMetric(_) => FastStatus::Numeric,
        FastError::Usage(_) | FastError::Index(_) => FastStatus::InvalidArgument,
        _ => FastStatus::Config,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (FastStatus, String)>) -> FastStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FastStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FastStatus::Panic
        }
    }
}

fn fail(err: FastError) -> (FastStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (FastStatus, String) {
    (FastStatus::NullPointer, format!("{what} is null"))
}

/// Message for the most recent failure on this thread, or null after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fast_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fast_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `fast train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fast_model_load(path: *const c_char, out: *mut *mut FastModelHandle) -> FastStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (FastStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let model = FastModel::<f32>::load(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(FastModelHandle { model }));
        Ok(())
    })
}

/// Releases a handle from [`fast_model_load`]. Null is ignored.
///
/// # Safety
/// `handle` must come from [`fast_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fast_model_free(handle: *mut FastModelHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Sensor count, history length and horizon of the model.
///
/// # Safety
/// `handle` must be live; each output pointer must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn fast_model_dims(
    handle: *const FastModelHandle,
    n_sensors: *mut usize,
    t_hist: *mut usize,
    t_horizon: *mut usize,
) -> FastStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let c = &h.model.config;
        for (p, v) in [(n_sensors, c.n_sensors), (t_hist, c.t_hist), (t_horizon, c.t_horizon)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Forecasts `[T_f, N]` raw-scale values from a raw-scale `[T_h, N]` window
/// whose first row falls at (`start_slot`, `start_dow`). Both buffers are
/// row-major; their lengths are checked against the model.
///
/// # Safety
/// `window` must hold `window_len` readable floats and `out` `out_len`
/// writable floats.
#[no_mangle]
pub unsafe extern "C" fn fast_model_predict(
    handle: *const FastModelHandle,
    window: *const f32,
    window_len: usize,
    start_slot: usize,
    start_dow: usize,
    out: *mut f32,
    out_len: usize,
) -> FastStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if window.is_null() {
            return Err(null("window"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let c = &h.model.config;
        let (want_in, want_out) = (c.t_hist * c.n_sensors, c.t_horizon * c.n_sensors);
        if window_len != want_in || out_len != want_out {
            return Err((
                FastStatus::InvalidArgument,
                format!("expected window_len={want_in} and out_len={want_out}, got {window_len} and {out_len}"),
            ));
        }
        if start_slot >= c.slots_per_day || start_dow >= 7 {
            return Err((
                FastStatus::InvalidArgument,
                format!("calendar position ({start_slot}, {start_dow}) out of range"),
            ));
        }
        let data = std::slice::from_raw_parts(window, window_len).to_vec();
        let x = Tensor::new(&[c.t_hist, c.n_sensors], data).map_err(fail)?;
        let y = h.model.predict(&x, start_slot, start_dow).map_err(fail)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(y.data());
        Ok(())
    })
}
