//! C ABI over `frevl`.
//!
//! Every fallible call returns a [`FrevlStatus`]. On failure a description is
//! kept per thread and can be read with [`frevl_last_error`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use frevl::fusion::checkpoint;
use frevl::fusion::{forward, FusionParams, Mode};
use frevl::store::{read_cache, EmbeddingRecord, Label, LabelKind};
use frevl::tensor::Tensor;
use frevl::train::pair_score;
use frevl::Error;

/// Result of every fallible call. `FREVL_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrevlStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or malformed, e.g. a non-UTF-8 path.
    InvalidArgument = 2,
    /// A file could not be read.
    Io = 3,
    /// A file was read but its contents are not a valid cache or checkpoint.
    Corrupt = 4,
    /// Inputs do not match the model, e.g. wrong widths or non-unit rows.
    BadInput = 5,
    /// The computation produced a non-finite value.
    Numeric = 6,
    /// An unexpected internal failure; the message has details.
    Internal = 7,
}

/// A loaded fusion network.
pub struct FrevlModel {
    params: FusionParams<f32>,
}

/// A decoded embedding cache.
pub struct FrevlCache {
    records: Vec<EmbeddingRecord>,
    d_v: usize,
    d_t: usize,
    label_kind: FrevlLabelKind,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nulls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FrevlStatus {
    match e {
        Error::Io { .. } => FrevlStatus::Io,
        Error::CorruptCache { .. } | Error::CorruptCheckpoint { .. } | Error::DuplicateId(_) => FrevlStatus::Corrupt,
        Error::Dimension { .. } | Error::NotUnitNorm { .. } | Error::ZeroNorm { .. } | Error::LengthMismatch(..) => {
            FrevlStatus::BadInput
        }
        Error::NumericFault { .. } | Error::NonFiniteLoss { .. } => FrevlStatus::Numeric,
        _ => FrevlStatus::Internal,
    }
}

struct Fail(FrevlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FrevlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FrevlStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FrevlStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(FrevlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(FrevlStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn write<T>(p: *mut T, value: T) {
    if !p.is_null() {
        unsafe { p.write(value) };
    }
}

unsafe fn rows(p: *const f32, batch: usize, width: usize, what: &str) -> Result<Tensor<f32>, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let data = unsafe { std::slice::from_raw_parts(p, batch * width) }.to_vec();
    Ok(Tensor::new(vec![batch, width], data)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn frevl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn frevl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint. On success `*out` owns a model to be released with
/// `frevl_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frevl_model_load(path: *const c_char, out: *mut *mut FrevlModel) -> FrevlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(path) }?;
        let params = checkpoint::load(&path)?.params;
        unsafe { out.write(Box::into_raw(Box::new(FrevlModel { params }))) };
        Ok(())
    })
}

/// # Safety
/// `model` must come from `frevl_model_load` and not have been freed. NULL is
/// accepted and ignored.
#[no_mangle]
pub unsafe extern "C" fn frevl_model_free(model: *mut FrevlModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Input and output widths of a model. Any output pointer may be NULL.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn frevl_model_dims(
    model: *const FrevlModel,
    d_v: *mut usize,
    d_t: *mut usize,
    out_dim: *mut usize,
) -> FrevlStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let c = &m.params.config;
        unsafe {
            write(d_v, c.d_v);
            write(d_t, c.d_t);
            write(out_dim, c.out_dim);
        }
        Ok(())
    })
}

unsafe fn run_forward(
    model: *const FrevlModel,
    image: *const f32,
    text: *const f32,
    batch: usize,
) -> Result<Tensor<f32>, Fail> {
    let m = unsafe { deref(model, "model") }?;
    if batch == 0 {
        return Err(Fail(FrevlStatus::InvalidArgument, "batch must be positive".into()));
    }
    let c = &m.params.config;
    let v = unsafe { rows(image, batch, c.d_v, "image") }?;
    let t = unsafe { rows(text, batch, c.d_t, "text") }?;
    Ok(forward(&v, &t, &m.params, Mode::Eval)?.0)
}

/// Eval-mode forward pass over `batch` pairs. `image` holds `batch × d_v`
/// and `text` `batch × d_t` row-major unit-norm floats; `out` receives
/// `batch × out_dim` values and `out_len` must be at least that.
///
/// # Safety
/// Every pointer must reference at least the number of floats stated above.
#[no_mangle]
pub unsafe extern "C" fn frevl_model_forward(
    model: *const FrevlModel,
    image: *const f32,
    text: *const f32,
    batch: usize,
    out: *mut f32,
    out_len: usize,
) -> FrevlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let y = unsafe { run_forward(model, image, text, batch) }?;
        if out_len < y.len() {
            return Err(Fail(
                FrevlStatus::InvalidArgument,
                format!("out_len {out_len} is smaller than the {} outputs", y.len()),
            ));
        }
        unsafe { std::slice::from_raw_parts_mut(out, y.len()) }.copy_from_slice(y.data());
        Ok(())
    })
}

/// One relevance score per pair: the output itself for one-wide heads, else
/// last logit minus first. `scores` receives `batch` floats.
///
/// # Safety
/// As `frevl_model_forward`, with `scores` holding `batch` floats.
#[no_mangle]
pub unsafe extern "C" fn frevl_model_score(
    model: *const FrevlModel,
    image: *const f32,
    text: *const f32,
    batch: usize,
    scores: *mut f32,
) -> FrevlStatus {
    guard(|| {
        if scores.is_null() {
            return Err(null("scores"));
        }
        let y = unsafe { run_forward(model, image, text, batch) }?;
        let out = unsafe { std::slice::from_raw_parts_mut(scores, batch) };
        for (r, s) in out.iter_mut().enumerate() {
            *s = pair_score(y.row(r)) as f32;
        }
        Ok(())
    })
}

/// Reads an embedding cache. On success `*out` owns a cache to be released
/// with `frevl_cache_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frevl_cache_open(path: *const c_char, out: *mut *mut FrevlCache) -> FrevlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(path) }?;
        let (h, records) = read_cache(&path)?;
        let label_kind = match h.label_kind {
            LabelKind::None => FrevlLabelKind::None,
            LabelKind::Class => FrevlLabelKind::Class,
            LabelKind::Scalar => FrevlLabelKind::Scalar,
        };
        let cache = FrevlCache { records, d_v: h.d_v as usize, d_t: h.d_t as usize, label_kind };
        unsafe { out.write(Box::into_raw(Box::new(cache))) };
        Ok(())
    })
}

/// # Safety
/// `cache` must come from `frevl_cache_open` and not have been freed. NULL is
/// accepted and ignored.
#[no_mangle]
pub unsafe extern "C" fn frevl_cache_free(cache: *mut FrevlCache) {
    if !cache.is_null() {
        drop(unsafe { Box::from_raw(cache) });
    }
}

/// Label type stored in a cache.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrevlLabelKind {
    None = 0,
    Class = 1,
    Scalar = 2,
}

/// Record count, vector widths and label type. Any output pointer may be NULL.
///
/// # Safety
/// `cache` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn frevl_cache_info(
    cache: *const FrevlCache,
    count: *mut usize,
    d_v: *mut usize,
    d_t: *mut usize,
    label_kind: *mut FrevlLabelKind,
) -> FrevlStatus {
    guard(|| {
        let c = unsafe { deref(cache, "cache") }?;
        unsafe {
            write(count, c.records.len());
            write(d_v, c.d_v);
            write(d_t, c.d_t);
            write(label_kind, c.label_kind);
        }
        Ok(())
    })
}

/// Copies record `index`. `image` and `text` receive `d_v` and `d_t` floats.
/// `class_label` is set for class-labelled caches and `scalar_label` for
/// scalar ones; other outputs are left untouched. Every output may be NULL.
///
/// # Safety
/// `cache` must be a live handle; non-null buffers must be large enough.
#[no_mangle]
pub unsafe extern "C" fn frevl_cache_record(
    cache: *const FrevlCache,
    index: usize,
    id: *mut u64,
    image: *mut f32,
    text: *mut f32,
    class_label: *mut u32,
    scalar_label: *mut f32,
) -> FrevlStatus {
    guard(|| {
        let c = unsafe { deref(cache, "cache") }?;
        let r = c.records.get(index).ok_or_else(|| {
            Fail(FrevlStatus::InvalidArgument, format!("index {index} out of range for {} records", c.records.len()))
        })?;
        unsafe {
            write(id, r.id);
            if !image.is_null() {
                std::slice::from_raw_parts_mut(image, r.image.len()).copy_from_slice(&r.image);
            }
            if !text.is_null() {
                std::slice::from_raw_parts_mut(text, r.text.len()).copy_from_slice(&r.text);
            }
            match r.label {
                Label::Class(k) => write(class_label, k),
                Label::Scalar(x) => write(scalar_label, x),
                Label::None => {}
            }
        }
        Ok(())
    })
}
