//! C ABI for the refinement toolkit. Handles are opaque pointers owned by
//! the library; every fallible call returns a [`CrfStatus`] and leaves a
//! human-readable message for [`crf_last_error`] on failure. The matching
//! header lives in `include/crf_refine.h` and is regenerated by the build
//! script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use crf_refine::atrous::bilinear_upsample;
use crf_refine::densecrf::{inference, InferenceConfig, KernelParams};
use crf_refine::tensor::{Image, LabelMap, Tensor3};
use crf_refine::{io, Error};

/// Outcome of a C API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrfStatus {
    CrfStatusOk = 0,
    CrfStatusNullPointer = 1,
    CrfStatusInvalidArgument = 2,
    CrfStatusShapeMismatch = 3,
    CrfStatusIoError = 4,
    CrfStatusFormatError = 5,
    CrfStatusPanic = 6,
}

/// The five pairwise-kernel hyperparameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CrfKernelParams {
    pub w1: f32,
    pub w2: f32,
    pub sigma_alpha: f32,
    pub sigma_beta: f32,
    pub sigma_gamma: f32,
}

/// Opaque real-valued H x W x C tensor.
pub struct CrfTensor {
    inner: Tensor3,
}

/// Opaque 8-bit RGB image.
pub struct CrfImage {
    inner: Image,
}

/// Opaque per-pixel label map.
pub struct CrfLabelMap {
    inner: LabelMap,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> CrfStatus {
    match err {
        Error::Io(_) => CrfStatus::CrfStatusIoError,
        Error::BadMagic { .. }
        | Error::Truncated(_)
        | Error::UnsupportedFormat(_)
        | Error::DimensionOverflow(_) => CrfStatus::CrfStatusFormatError,
        Error::ShapeMismatch(_) => CrfStatus::CrfStatusShapeMismatch,
        _ => CrfStatus::CrfStatusInvalidArgument,
    }
}

fn fail(err: Error) -> CrfStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

fn guard(f: impl FnOnce() -> CrfStatus) -> CrfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CrfStatus::CrfStatusPanic
        }
    }
}

fn null_fail(what: &str) -> CrfStatus {
    set_error(&format!("null pointer: {what}"));
    CrfStatus::CrfStatusNullPointer
}

/// # Safety
/// `path` must be a valid NUL-terminated string.
unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, CrfStatus> {
    if path.is_null() {
        return Err(null_fail("path"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(CrfStatus::CrfStatusInvalidArgument)
        }
    }
}

unsafe fn write_out<T>(out: *mut *mut T, value: T, what: &str) -> CrfStatus {
    if out.is_null() {
        return null_fail(what);
    }
    *out = Box::into_raw(Box::new(value));
    CrfStatus::CrfStatusOk
}

/// Message describing this thread's most recent failure. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn crf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn crf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// --------------------------------------------------------------- tensors

/// Creates a tensor from a dense row-major, channel-minor float buffer of
/// length `height * width * channels`.
///
/// # Safety
/// `data` must point to `height * width * channels` readable floats and
/// `out` to a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn crf_tensor_create(
    height: u32,
    width: u32,
    channels: u32,
    data: *const f32,
    out: *mut *mut CrfTensor,
) -> CrfStatus {
    guard(|| {
        if data.is_null() {
            return null_fail("data");
        }
        // Validate dimensions before trusting the buffer length.
        let checked = match Tensor3::new(height as usize, width as usize, channels as usize) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        let slice = std::slice::from_raw_parts(data, checked.as_slice().len());
        match Tensor3::from_vec(
            height as usize,
            width as usize,
            channels as usize,
            slice.to_vec(),
        ) {
            Ok(t) => write_out(out, CrfTensor { inner: t }, "out"),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crf_tensor_load(
    path: *const c_char,
    out: *mut *mut CrfTensor,
) -> CrfStatus {
    guard(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match io::load_tensor(path) {
            Ok(t) => write_out(out, CrfTensor { inner: t }, "out"),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `tensor` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crf_tensor_save(
    tensor: *const CrfTensor,
    path: *const c_char,
) -> CrfStatus {
    guard(|| {
        let Some(t) = tensor.as_ref() else {
            return null_fail("tensor");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match io::save_tensor(path, &t.inner) {
            Ok(()) => CrfStatus::CrfStatusOk,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// All pointers must be valid; dimension slots are written on success.
#[no_mangle]
pub unsafe extern "C" fn crf_tensor_dims(
    tensor: *const CrfTensor,
    height: *mut u32,
    width: *mut u32,
    channels: *mut u32,
) -> CrfStatus {
    guard(|| {
        let Some(t) = tensor.as_ref() else {
            return null_fail("tensor");
        };
        if height.is_null() || width.is_null() || channels.is_null() {
            return null_fail("dimension out-pointer");
        }
        *height = t.inner.height() as u32;
        *width = t.inner.width() as u32;
        *channels = t.inner.channels() as u32;
        CrfStatus::CrfStatusOk
    })
}

/// Borrowed pointer to the tensor's `H * W * C` floats; NULL for a NULL
/// handle. Valid while the handle lives.
///
/// # Safety
/// `tensor` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn crf_tensor_data(tensor: *const CrfTensor) -> *const f32 {
    match tensor.as_ref() {
        Some(t) => t.inner.as_slice().as_ptr(),
        None => std::ptr::null(),
    }
}

/// Bilinear upsampling by an integer factor (half-pixel-center alignment).
///
/// # Safety
/// `tensor` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crf_tensor_upsample(
    tensor: *const CrfTensor,
    factor: u32,
    out: *mut *mut CrfTensor,
) -> CrfStatus {
    guard(|| {
        let Some(t) = tensor.as_ref() else {
            return null_fail("tensor");
        };
        match bilinear_upsample(&t.inner, factor as usize) {
            Ok(up) => write_out(out, CrfTensor { inner: up }, "out"),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `tensor` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn crf_tensor_free(tensor: *mut CrfTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

// ---------------------------------------------------------------- images

/// Creates an image from `height * width * 3` interleaved RGB bytes.
///
/// # Safety
/// `rgb` must point to that many readable bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crf_image_create(
    height: u32,
    width: u32,
    rgb: *const u8,
    out: *mut *mut CrfImage,
) -> CrfStatus {
    guard(|| {
        if rgb.is_null() {
            return null_fail("rgb");
        }
        let checked = match Image::new(height as usize, width as usize) {
            Ok(img) => img,
            Err(e) => return fail(e),
        };
        let slice = std::slice::from_raw_parts(rgb, checked.as_slice().len());
        match Image::from_vec(height as usize, width as usize, slice.to_vec()) {
            Ok(img) => write_out(out, CrfImage { inner: img }, "out"),
            Err(e) => fail(e),
        }
    })
}

/// Loads a binary PPM (P6, maxval 255).
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crf_image_load(path: *const c_char, out: *mut *mut CrfImage) -> CrfStatus {
    guard(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match io::load_image(path) {
            Ok(img) => write_out(out, CrfImage { inner: img }, "out"),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `image` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn crf_image_free(image: *mut CrfImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

// ------------------------------------------------------------ label maps

/// Loads a binary PGM (P5, maxval 255); 255 is the void label.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn crf_labelmap_load(
    path: *const c_char,
    out: *mut *mut CrfLabelMap,
) -> CrfStatus {
    guard(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match io::load_labelmap(path) {
            Ok(lm) => write_out(out, CrfLabelMap { inner: lm }, "out"),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `labels` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crf_labelmap_save(
    labels: *const CrfLabelMap,
    path: *const c_char,
) -> CrfStatus {
    guard(|| {
        let Some(lm) = labels.as_ref() else {
            return null_fail("labels");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match io::save_labelmap(path, &lm.inner) {
            Ok(()) => CrfStatus::CrfStatusOk,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// All pointers must be valid; dimension slots are written on success.
#[no_mangle]
pub unsafe extern "C" fn crf_labelmap_dims(
    labels: *const CrfLabelMap,
    height: *mut u32,
    width: *mut u32,
) -> CrfStatus {
    guard(|| {
        let Some(lm) = labels.as_ref() else {
            return null_fail("labels");
        };
        if height.is_null() || width.is_null() {
            return null_fail("dimension out-pointer");
        }
        *height = lm.inner.height() as u32;
        *width = lm.inner.width() as u32;
        CrfStatus::CrfStatusOk
    })
}

/// Borrowed pointer to the `H * W` row-major labels; NULL for a NULL
/// handle. Valid while the handle lives.
///
/// # Safety
/// `labels` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn crf_labelmap_data(labels: *const CrfLabelMap) -> *const u16 {
    match labels.as_ref() {
        Some(lm) => lm.inner.as_slice().as_ptr(),
        None => std::ptr::null(),
    }
}

/// # Safety
/// `labels` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn crf_labelmap_free(labels: *mut CrfLabelMap) {
    if !labels.is_null() {
        drop(Box::from_raw(labels));
    }
}

// ------------------------------------------------------------- inference

/// Runs mean-field CRF inference on score maps already at image
/// resolution (use [`crf_tensor_upsample`] first for coarse maps). Writes
/// the argmax labeling to `out_labels` and, when `out_marginals` is not
/// NULL, the final per-pixel marginals.
///
/// # Safety
/// `scores`, `image` and `params` must be live; `out_labels` writable;
/// `out_marginals` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn crf_refine(
    scores: *const CrfTensor,
    image: *const CrfImage,
    params: *const CrfKernelParams,
    iterations: u32,
    out_labels: *mut *mut CrfLabelMap,
    out_marginals: *mut *mut CrfTensor,
) -> CrfStatus {
    guard(|| {
        let Some(scores) = scores.as_ref() else {
            return null_fail("scores");
        };
        let Some(image) = image.as_ref() else {
            return null_fail("image");
        };
        let Some(p) = params.as_ref() else {
            return null_fail("params");
        };
        let kernel = KernelParams::new(p.w1, p.w2, p.sigma_alpha, p.sigma_beta, p.sigma_gamma);
        let config = InferenceConfig {
            iterations: iterations as usize,
            ..Default::default()
        };
        match inference(&scores.inner, &image.inner, &kernel, &config) {
            Ok(result) => {
                if !out_marginals.is_null() {
                    let status = write_out(
                        out_marginals,
                        CrfTensor {
                            inner: result.q.into_tensor(),
                        },
                        "out_marginals",
                    );
                    if status != CrfStatus::CrfStatusOk {
                        return status;
                    }
                }
                write_out(
                    out_labels,
                    CrfLabelMap {
                        inner: result.labels,
                    },
                    "out_labels",
                )
            }
            Err(e) => fail(e),
        }
    })
}
