//! C ABI over the `convmixer` crate.
//!
//! Every function returns a [`CmixStatus`]. On failure the message is kept
//! per thread and can be read with [`cmix_last_error`]. Models are opaque
//! [`CmixModel`] handles owned by the caller and released with
//! [`cmix_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use convmixer::harness::{Checkpoint, RunConfig};
use convmixer::model::{param_count, ConvMixerModel, ModelConfig};
use convmixer::{Error, Tensor};

/// Result of every exported call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmixStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Checkpoint = 5,
    NonFinite = 6,
    Panic = 7,
}

/// A model plus the run configuration it is saved with.
pub struct CmixModel {
    config: RunConfig,
    model: ConvMixerModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(err: &Error) -> CmixStatus {
    match err {
        Error::ShapeMismatch { .. }
        | Error::DataLength { .. }
        | Error::InputTooSmall { .. }
        | Error::InvalidShape(_) => CmixStatus::ShapeMismatch,
        Error::Io(_) | Error::DatasetMissing(_) => CmixStatus::Io,
        Error::Checkpoint(_) => CmixStatus::Checkpoint,
        Error::NonFinite(_) => CmixStatus::NonFinite,
        _ => CmixStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status and the thread's
/// last-error message.
fn guard(f: impl FnOnce() -> Result<(), (CmixStatus, String)>) -> CmixStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CmixStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside convmixer");
            CmixStatus::Panic
        }
    }
}

fn lift<T>(r: convmixer::Result<T>) -> Result<T, (CmixStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (CmixStatus, String) {
    (CmixStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, (CmixStatus, String)> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (CmixStatus::InvalidArgument, "path is not UTF-8".into()))
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cmix_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cmix_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Closed-form parameter count of a ConvMixer with the given shape.
///
/// # Safety
/// `out` must be null or point to writable memory for one `u64`.
#[no_mangle]
pub unsafe extern "C" fn cmix_param_count(
    hidden: usize,
    depth: usize,
    patch_size: usize,
    kernel_size: usize,
    in_channels: usize,
    num_classes: usize,
    out: *mut u64,
) -> CmixStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ModelConfig::new(
            hidden,
            depth,
            patch_size,
            kernel_size,
            in_channels,
            num_classes,
        );
        lift(cfg.validate())?;
        *out = param_count(&cfg);
        Ok(())
    })
}

/// Builds a freshly initialized model with the default switches (GELU,
/// BatchNorm, depthwise residual).
///
/// # Safety
/// `out` must be null or point to writable memory for one pointer. On
/// success `*out` owns a handle that must be released with
/// [`cmix_model_free`].
#[no_mangle]
pub unsafe extern "C" fn cmix_model_new(
    hidden: usize,
    depth: usize,
    patch_size: usize,
    kernel_size: usize,
    in_channels: usize,
    num_classes: usize,
    seed: u64,
    out: *mut *mut CmixModel,
) -> CmixStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = RunConfig {
            model: ModelConfig::new(
                hidden,
                depth,
                patch_size,
                kernel_size,
                in_channels,
                num_classes,
            ),
            seed,
            ..RunConfig::default()
        };
        let model = lift(ConvMixerModel::build(&config.model, seed))?;
        *out = Box::into_raw(Box::new(CmixModel { config, model }));
        Ok(())
    })
}

/// Loads the model stored in a checkpoint file.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` as for
/// [`cmix_model_new`].
#[no_mangle]
pub unsafe extern "C" fn cmix_model_load(
    path: *const c_char,
    out: *mut *mut CmixModel,
) -> CmixStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = lift(Checkpoint::load(path_arg(path)?))?;
        let model = lift(ck.to_model())?;
        *out = Box::into_raw(Box::new(CmixModel {
            config: ck.config,
            model,
        }));
        Ok(())
    })
}

/// Writes the model to a checkpoint file without optimizer state.
///
/// # Safety
/// `model` must be null or a live handle; `path` must be null or a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cmix_model_save(
    model: *const CmixModel,
    path: *const c_char,
) -> CmixStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = path_arg(path)?;
        lift(Checkpoint::from_model(&m.config, &m.model, None, 0, 0).save(path))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cmix_model_free(model: *mut CmixModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total number of trainable scalars.
///
/// # Safety
/// `model` must be null or a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cmix_model_num_parameters(
    model: *const CmixModel,
    out: *mut u64,
) -> CmixStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.num_parameters();
        Ok(())
    })
}

/// Number of output classes, i.e. logits per image.
///
/// # Safety
/// `model` must be null or a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cmix_model_num_classes(
    model: *const CmixModel,
    out: *mut usize,
) -> CmixStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.config().num_classes;
        Ok(())
    })
}

/// Eval-mode forward pass on a `batch×channels×height×width` f32 buffer,
/// already normalized. Writes `batch × num_classes` logits.
///
/// # Safety
/// `input` must point to `batch·channels·height·width` readable floats and
/// `logits` to `logits_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn cmix_model_predict(
    model: *const CmixModel,
    input: *const f32,
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    logits: *mut f32,
    logits_len: usize,
) -> CmixStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if input.is_null() {
            return Err(null("input"));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        let dims = [batch, channels, height, width];
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                (
                    CmixStatus::InvalidArgument,
                    format!("bad input extents {dims:?}"),
                )
            })?;
        let x = lift(Tensor::new(
            std::slice::from_raw_parts(input, n).to_vec(),
            &dims,
        ))?;
        let y = lift(m.model.predict(&x))?;
        if logits_len < y.numel() {
            return Err((
                CmixStatus::ShapeMismatch,
                format!(
                    "logits buffer holds {logits_len} floats, need {}",
                    y.numel()
                ),
            ));
        }
        std::slice::from_raw_parts_mut(logits, y.numel()).copy_from_slice(y.data());
        Ok(())
    })
}
