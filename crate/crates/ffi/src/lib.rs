//! C ABI over `irts_core`.
//!
//! Datasets and models cross the boundary as opaque handles that the caller
//! releases with the matching `*_free` function. Every fallible call returns
//! an [`IrtsStatus`]; on failure a message is available from
//! [`irts_last_error`] on the same thread. Panics never unwind into C: they
//! are caught and reported as [`IrtsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use irts_core::data::Dataset;
use irts_core::models::{impute, predict_label, Model};
use irts_core::rng;
use irts_core::synthetic::{generate_dataset, GeneratorConfig};
use irts_core::train::{auc, train, Checkpoint, TrainConfig};
use irts_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrtsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Checkpoint = 5,
    Capability = 6,
    Divergence = 7,
    Panic = 8,
    Internal = 9,
}

/// A loaded or generated dataset.
pub struct IrtsDataset {
    inner: Dataset,
}

/// A trained model together with the checkpoint it was restored from.
pub struct IrtsModel {
    ckpt: Checkpoint,
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(IrtsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => IrtsStatus::Io,
            Error::Json(_) | Error::Malformed { .. } | Error::SchemaVersion { .. } => IrtsStatus::Format,
            Error::Checkpoint(_) | Error::FingerprintMismatch => IrtsStatus::Checkpoint,
            Error::Capability(_) => IrtsStatus::Capability,
            Error::Divergence { .. } => IrtsStatus::Divergence,
            Error::NonScalarRoot(_) | Error::NonDeterministic { .. } => IrtsStatus::Internal,
            _ => IrtsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(IrtsStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(IrtsStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IrtsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IrtsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            IrtsStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn irts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread; empty if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn irts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Generates `n_cases` synthetic three-channel cases.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn irts_dataset_generate(
    n_cases: usize,
    seed: u64,
    labeled: bool,
    out: *mut *mut IrtsDataset,
) -> IrtsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = GeneratorConfig {
            n_cases,
            seed,
            labeled,
            ..Default::default()
        };
        store(out, IrtsDataset { inner: generate_dataset(&cfg)? });
        Ok(())
    })
}

/// Reads a JSONL dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irts_dataset_load(path: *const c_char, out: *mut *mut IrtsDataset) -> IrtsStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        store(out, IrtsDataset { inner: Dataset::load(path)? });
        Ok(())
    })
}

/// Writes a dataset as JSONL.
///
/// # Safety
/// `ds` must be a live dataset handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn irts_dataset_save(ds: *const IrtsDataset, path: *const c_char) -> IrtsStatus {
    guard(|| {
        let ds = deref(ds, "ds")?;
        ds.inner.save(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of cases; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn irts_dataset_len(ds: *const IrtsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Number of channels; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn irts_dataset_channels(ds: *const IrtsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.channels())
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn irts_dataset_free(ds: *mut IrtsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains a model. `config_json` is a JSON training configuration, or null
/// for the defaults with the channel count taken from `train_set`.
///
/// # Safety
/// Dataset handles must be live; `config_json` null or NUL-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn irts_train(
    config_json: *const c_char,
    train_set: *const IrtsDataset,
    valid_set: *const IrtsDataset,
    out: *mut *mut IrtsModel,
) -> IrtsStatus {
    guard(|| {
        let train_set = deref(train_set, "train_set")?;
        let valid_set = deref(valid_set, "valid_set")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_json.is_null() {
            let mut cfg = TrainConfig::default();
            cfg.model.channels = train_set.inner.channels();
            cfg
        } else {
            let text = path_arg(config_json, "config_json")?;
            serde_json::from_str(text).map_err(|e| Failure(IrtsStatus::Format, format!("configuration: {e}")))?
        };
        let (ckpt, _) = train(&cfg, &train_set.inner, &valid_set.inner)?;
        let model = ckpt.model()?;
        store(out, IrtsModel { ckpt, model });
        Ok(())
    })
}

/// Restores a model from a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn irts_model_load(path: *const c_char, out: *mut *mut IrtsModel) -> IrtsStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = Checkpoint::load(path)?;
        let model = ckpt.model()?;
        store(out, IrtsModel { ckpt, model });
        Ok(())
    })
}

/// Writes the model's checkpoint.
///
/// # Safety
/// `model` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn irts_model_save(model: *const IrtsModel, path: *const c_char) -> IrtsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        m.ckpt.save(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn irts_model_free(model: *mut IrtsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent dimension; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irts_model_latent_dim(model: *const IrtsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.latent_dim())
}

/// Number of classes of the classifier head; 0 without one.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn irts_model_classes(model: *const IrtsModel) -> usize {
    model
        .as_ref()
        .and_then(|m| m.model.classifier.as_ref())
        .map_or(0, |c| c.classes)
}

/// One posterior completion of case `case_index` evaluated at `n` queries
/// `(channels[i], times[i])` (0-based channels, times in [0, 1]); results go
/// to `out[0..n]`. Randomness is keyed by `(seed, case_index)`, matching the
/// `irts impute` command.
///
/// # Safety
/// Handles must be live; `channels`, `times` and `out` must hold `n` items.
#[no_mangle]
pub unsafe extern "C" fn irts_model_impute(
    model: *const IrtsModel,
    ds: *const IrtsDataset,
    case_index: usize,
    channels: *const usize,
    times: *const f64,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> IrtsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let ds = deref(ds, "ds")?;
        let channels = slice(channels, n, "channels")?;
        let times = slice(times, n, "times")?;
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        let case = ds
            .inner
            .cases
            .get(case_index)
            .ok_or_else(|| invalid(format!("case {case_index} out of range for {} cases", ds.inner.len())))?;
        let c = m.model.config.channels;
        let mut queries = vec![Vec::new(); c];
        let mut slot = Vec::with_capacity(n);
        for (&ch, &t) in channels.iter().zip(times) {
            let q = queries
                .get_mut(ch)
                .ok_or_else(|| invalid(format!("channel {ch} out of range for {c} channels")))?;
            slot.push((ch, q.len()));
            q.push(t);
        }
        let mut r = rng::stream(seed, rng::INFER, case_index as u64);
        let imp = impute(&m.model, case, &queries, 1, &mut r)?;
        let values = std::slice::from_raw_parts_mut(out, n);
        for (v, &(ch, i)) in values.iter_mut().zip(&slot) {
            *v = imp.samples[0][ch][i];
        }
        Ok(())
    })
}

/// Predicted class of case `case_index` from `samples` posterior draws.
/// When `logp` is non-null it receives the per-class mean log-probabilities
/// and must hold [`irts_model_classes`] items.
///
/// # Safety
/// Handles must be live; `out_class` writable; `logp` null or large enough.
#[no_mangle]
pub unsafe extern "C" fn irts_model_predict(
    model: *const IrtsModel,
    ds: *const IrtsDataset,
    case_index: usize,
    samples: usize,
    seed: u64,
    out_class: *mut usize,
    logp: *mut f64,
) -> IrtsStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let ds = deref(ds, "ds")?;
        if out_class.is_null() {
            return Err(null("out_class"));
        }
        let case = ds
            .inner
            .cases
            .get(case_index)
            .ok_or_else(|| invalid(format!("case {case_index} out of range for {} cases", ds.inner.len())))?;
        let mut r = rng::stream(seed, rng::INFER, case_index as u64);
        let (class, lp) = predict_label(&m.model, case, samples, &mut r)?;
        *out_class = class;
        if !logp.is_null() {
            ptr::copy_nonoverlapping(lp.as_ptr(), logp, lp.len());
        }
        Ok(())
    })
}

/// Area under the ROC curve of `scores` against binary `labels` (nonzero
/// is positive).
///
/// # Safety
/// `scores` and `labels` must hold `n` items; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irts_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> IrtsStatus {
    guard(|| {
        let scores = slice(scores, n, "scores")?;
        let labels: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&l| l != 0).collect();
        if out.is_null() {
            return Err(null("out"));
        }
        *out = auc(scores, &labels)?;
        Ok(())
    })
}
