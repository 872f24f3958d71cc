//! C ABI over the core detector. Opaque handles, integer status codes,
//! and a thread-local last-error message; no Rust types cross the
//! boundary. The generated header lives in `include/nbed.h`.
//!
//! Conventions:
//! - every fallible function returns an `NbedStatus`; out-parameters are
//!   written only on `NBED_OK`
//! - images are `double` buffers in channel-major CHW order with values
//!   in [0, 1]; edge maps come back as row-major H x W probabilities
//! - handles from `nbed_model_*` constructors must be released with
//!   `nbed_model_free`

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::Array3;

use nbed::model::{ModelConfig, Nbed};
use nbed::train::Checkpoint;
use nbed::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NbedStatus {
    NbedOk = 0,
    /// A required pointer argument was null.
    NbedNullArgument = 1,
    NbedInvalidConfig = 2,
    NbedBadData = 3,
    NbedBadCheckpoint = 4,
    NbedNumericFailure = 5,
    NbedShapeMismatch = 6,
    NbedIoFailure = 7,
    /// A string argument was not valid UTF-8.
    NbedInvalidUtf8 = 8,
    /// The library panicked internally; state may be inconsistent.
    NbedPanic = 9,
}

/// A loaded detector. Opaque; only valid through the `nbed_model_*` calls.
pub struct NbedModel {
    inner: Nbed,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let safe = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = safe);
}

fn status_of(err: &Error) -> NbedStatus {
    match err {
        Error::Config(_) => NbedStatus::NbedInvalidConfig,
        Error::Data(_) | Error::Image(_) => NbedStatus::NbedBadData,
        Error::Checkpoint(_) => NbedStatus::NbedBadCheckpoint,
        Error::Numeric(_) => NbedStatus::NbedNumericFailure,
        Error::Shape(_) => NbedStatus::NbedShapeMismatch,
        Error::Io(_) => NbedStatus::NbedIoFailure,
    }
}

fn fail(err: Error) -> NbedStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Run `f`, converting panics into `NbedPanic` instead of unwinding into C.
fn guarded(f: impl FnOnce() -> NbedStatus) -> NbedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            NbedStatus::NbedPanic
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, NbedStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(NbedStatus::NbedNullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        NbedStatus::NbedInvalidUtf8
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nbed_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nbed_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build a freshly initialized model from the default configuration.
///
/// # Safety
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn nbed_model_new_default(seed: u64, out: *mut *mut NbedModel) -> NbedStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return NbedStatus::NbedNullArgument;
        }
        let cfg = ModelConfig { seed, ..ModelConfig::default() };
        match Nbed::build(cfg) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(NbedModel { inner }));
                NbedStatus::NbedOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Build a freshly initialized model from flat `model.* = value` text,
/// the same format the CLI config files use.
///
/// # Safety
/// `config_text` must be a NUL-terminated string; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn nbed_model_from_config_text(
    config_text: *const c_char,
    out: *mut *mut NbedModel,
) -> NbedStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return NbedStatus::NbedNullArgument;
        }
        let text = match cstr(config_text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let built = ModelConfig::from_text(text).and_then(Nbed::build);
        match built {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(NbedModel { inner }));
                NbedStatus::NbedOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Load a trained model from a checkpoint file written by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn nbed_model_from_checkpoint(
    path: *const c_char,
    out: *mut *mut NbedModel,
) -> NbedStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return NbedStatus::NbedNullArgument;
        }
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let loaded =
            Checkpoint::load(Path::new(path)).and_then(|c| nbed::train::model_from_checkpoint(&c));
        match loaded {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(NbedModel { inner }));
                NbedStatus::NbedOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of trainable scalars in the model.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nbed_model_parameter_count(
    model: *const NbedModel,
    out: *mut usize,
) -> NbedStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            set_error("null argument");
            return NbedStatus::NbedNullArgument;
        }
        *out = (*model).inner.params().total_scalars();
        NbedStatus::NbedOk
    })
}

/// Detect edges in one image.
///
/// `image` holds `3 * height * width` doubles in CHW order, values in
/// [0, 1]. `edge_map` receives `height * width` probabilities, row-major.
/// Inputs of any size work; padding happens internally.
///
/// # Safety
/// Both buffers must match the stated lengths; `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn nbed_model_forward(
    model: *const NbedModel,
    image: *const f64,
    height: usize,
    width: usize,
    edge_map: *mut f64,
) -> NbedStatus {
    guarded(|| {
        if model.is_null() || image.is_null() || edge_map.is_null() {
            set_error("null argument");
            return NbedStatus::NbedNullArgument;
        }
        if height == 0 || width == 0 {
            set_error("image dimensions must be nonzero");
            return NbedStatus::NbedShapeMismatch;
        }
        let n = 3 * height * width;
        let raw = std::slice::from_raw_parts(image, n);
        let arr = match Array3::from_shape_vec((3, height, width), raw.to_vec()) {
            Ok(a) => a,
            Err(e) => {
                set_error(&e.to_string());
                return NbedStatus::NbedShapeMismatch;
            }
        };
        match (*model).inner.forward(&arr) {
            Ok(map) => {
                let out = std::slice::from_raw_parts_mut(edge_map, height * width);
                for (dst, src) in out.iter_mut().zip(map.iter()) {
                    *dst = *src;
                }
                NbedStatus::NbedOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must have come from an `nbed_model_*` constructor and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nbed_model_free(model: *mut NbedModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
