//! C ABI over lineweave: load a trained model, segment pages, read back label
//! maps and scores.
//!
//! Every fallible call returns an [`LwStatus`]; on failure the message is
//! available from [`lw_last_error`] on the same thread. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lineweave::doc_io::{load_document, DocumentImage, LabelMap};
use lineweave::eval_metrics::evaluate;
use lineweave::line_extract::SegmentationResult;
use lineweave::nn::{load_checkpoint, ModelState};
use lineweave::pipeline::{segment_page, RunConfig};
use lineweave::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LwStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Image = 4,
    Config = 5,
    Checkpoint = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// A trained network plus the run configuration used to segment with it.
pub struct LwModel {
    model: ModelState,
    cfg: RunConfig,
}

/// One segmented page.
pub struct LwSegmentation {
    result: SegmentationResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul removed"));
}

fn status_of(e: &Error) -> LwStatus {
    match e {
        Error::Io { .. } => LwStatus::Io,
        Error::Image { .. } | Error::EmptyImage(_) => LwStatus::Image,
        Error::Config(_) => LwStatus::Config,
        Error::Checkpoint(_) => LwStatus::Checkpoint,
        Error::InvalidInput(_) | Error::PageXml { .. } | Error::Shape { .. } => LwStatus::InvalidArgument,
        _ => LwStatus::Internal,
    }
}

/// Run `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), (LwStatus, String)>) -> LwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LwStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            LwStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (LwStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (LwStatus, String) {
    (LwStatus::NullArgument, format!("{name} is null"))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, (LwStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (LwStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next lineweave call on the same thread.
#[no_mangle]
pub extern "C" fn lw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a checkpoint. `config_path` may be null for built-in defaults; its
/// patch size must match the checkpoint.
///
/// # Safety
/// Paths must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_model_load(
    checkpoint_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut LwModel,
) -> LwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ckpt = path_arg(checkpoint_path, "checkpoint_path")?;
        let cfg = if config_path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(path_arg(config_path, "config_path")?).map_err(lib_err)?
        };
        let model: ModelState = load_checkpoint(&ckpt).map_err(lib_err)?;
        if model.input_side() != cfg.patch_size {
            return Err((
                LwStatus::Config,
                format!(
                    "checkpoint takes {}px patches, config patch_size is {}",
                    model.input_side(),
                    cfg.patch_size
                ),
            ));
        }
        *out = Box::into_raw(Box::new(LwModel { model, cfg }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`lw_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn lw_model_free(model: *mut LwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Patch side the model was trained with.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn lw_model_patch_size(model: *const LwModel, out: *mut usize) -> LwStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.input_side();
        Ok(())
    })
}

unsafe fn segment_doc(model: *const LwModel, doc: DocumentImage, out: *mut *mut LwSegmentation) -> Result<(), (LwStatus, String)> {
    let m = model.as_ref().ok_or_else(|| null("model"))?;
    let seg = segment_page(&m.model, &doc, &m.cfg).map_err(lib_err)?;
    *out = Box::into_raw(Box::new(LwSegmentation { result: seg.result }));
    Ok(())
}

/// Segment the page image at `image_path` (PNG, JPEG or TIFF).
///
/// # Safety
/// `model` must be a live handle; `image_path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_segment_file(
    model: *const LwModel,
    image_path: *const c_char,
    out: *mut *mut LwSegmentation,
) -> LwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let doc = load_document(path_arg(image_path, "image_path")?).map_err(lib_err)?;
        segment_doc(model, doc, out)
    })
}

/// Segment a row-major grayscale page, intensities in [0, 1] with ink dark.
///
/// # Safety
/// `pixels` must point to `height * width` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_segment_gray(
    model: *const LwModel,
    pixels: *const f32,
    height: usize,
    width: usize,
    out: *mut *mut LwSegmentation,
) -> LwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let n = height.checked_mul(width).ok_or((LwStatus::InvalidArgument, "page too large".into()))?;
        let px = std::slice::from_raw_parts(pixels, n).to_vec();
        let doc = DocumentImage::new("page", height, width, px).map_err(lib_err)?;
        segment_doc(model, doc, out)
    })
}

/// # Safety
/// `seg` must come from a segment call or be null.
#[no_mangle]
pub unsafe extern "C" fn lw_segmentation_free(seg: *mut LwSegmentation) {
    if !seg.is_null() {
        drop(Box::from_raw(seg));
    }
}

/// Page height and width of a segmentation.
///
/// # Safety
/// `seg` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn lw_segmentation_dims(seg: *const LwSegmentation, height: *mut usize, width: *mut usize) -> LwStatus {
    guard(|| {
        let s = seg.as_ref().ok_or_else(|| null("seg"))?;
        let (h, w) = s.result.labels.dims();
        *height.as_mut().ok_or_else(|| null("height"))? = h;
        *width.as_mut().ok_or_else(|| null("width"))? = w;
        Ok(())
    })
}

/// Number of text lines; labels run from 1 to this count.
///
/// # Safety
/// `seg` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_segmentation_line_count(seg: *const LwSegmentation, out: *mut u32) -> LwStatus {
    guard(|| {
        let s = seg.as_ref().ok_or_else(|| null("seg"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.result.line_count() as u32;
        Ok(())
    })
}

/// Whether the page had no blob lines and all ink went to line 1.
///
/// # Safety
/// `seg` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_segmentation_fallback(seg: *const LwSegmentation, out: *mut bool) -> LwStatus {
    guard(|| {
        let s = seg.as_ref().ok_or_else(|| null("seg"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.result.fallback;
        Ok(())
    })
}

/// Copy the row-major label map (0 = background) into `buf`, which must hold
/// `height * width` values.
///
/// # Safety
/// `buf` must point to `len` writable `u32`s.
#[no_mangle]
pub unsafe extern "C" fn lw_segmentation_labels(seg: *const LwSegmentation, buf: *mut u32, len: usize) -> LwStatus {
    guard(|| {
        let s = seg.as_ref().ok_or_else(|| null("seg"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let labels = s.result.labels.labels();
        if len < labels.len() {
            return Err((
                LwStatus::BufferTooSmall,
                format!("need {} labels, buffer holds {len}", labels.len()),
            ));
        }
        ptr::copy_nonoverlapping(labels.as_ptr(), buf, labels.len());
        Ok(())
    })
}

/// Lines, pixel counts and outline polygons as JSON. Release with
/// [`lw_string_free`].
///
/// # Safety
/// `seg` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_segmentation_to_json(seg: *const LwSegmentation, out: *mut *mut c_char) -> LwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = seg.as_ref().ok_or_else(|| null("seg"))?;
        let json = CString::new(s.result.to_json()).map_err(|e| (LwStatus::Internal, e.to_string()))?;
        *out = json.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Line IU (at `theta`) and pixel IU of two row-major label maps.
///
/// # Safety
/// `pred` and `gt` must each point to `height * width` labels.
#[no_mangle]
pub unsafe extern "C" fn lw_evaluate(
    pred: *const u32,
    gt: *const u32,
    height: usize,
    width: usize,
    theta: f64,
    liu: *mut f64,
    piu: *mut f64,
) -> LwStatus {
    guard(|| {
        if pred.is_null() || gt.is_null() {
            return Err(null("label map"));
        }
        let n = height.checked_mul(width).ok_or((LwStatus::InvalidArgument, "page too large".into()))?;
        let map = |p: *const u32| LabelMap::new(height, width, std::slice::from_raw_parts(p, n).to_vec());
        let r = evaluate(&map(pred).map_err(lib_err)?, &map(gt).map_err(lib_err)?, theta, None).map_err(lib_err)?;
        *liu.as_mut().ok_or_else(|| null("liu"))? = r.liu;
        *piu.as_mut().ok_or_else(|| null("piu"))? = r.piu;
        Ok(())
    })
}

#[cfg(test)]
mod tests;
