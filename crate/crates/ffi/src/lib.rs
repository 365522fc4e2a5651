//! C ABI over the `setchoice` library.
//!
//! Models and datasets are opaque handles created by this library and
//! released with the matching `_free` function. Every fallible call returns a
//! status code, `SETCHOICE_OK` on success; after a failure
//! `setchoice_last_error` describes it for the calling thread. Tasks are passed
//! as row-major `n x d` arrays of doubles. Strings are NUL-terminated UTF-8.
//! Text results are copied into caller buffers: when `capacity` is too small
//! the call returns `SETCHOICE_ERR_BUFFER` and `needed` holds the size to
//! retry with, terminator included.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::Array2;
use serde::Deserialize;
use setchoice::datagen::{generate, GeneratorSpec};
use setchoice::dataset::DatasetFile;
use setchoice::harness::{evaluate, fit_all, CvConfig, ExperimentConfig, ModelConfig};
use setchoice::train::TrainConfig;
use setchoice::{AnyModel, ChoiceModel, ChoiceTask, Dataset, Error};

pub const SETCHOICE_OK: i32 = 0;
pub const SETCHOICE_ERR_NULL: i32 = 1;
pub const SETCHOICE_ERR_UTF8: i32 = 2;
pub const SETCHOICE_ERR_SHAPE: i32 = 3;
pub const SETCHOICE_ERR_STATE: i32 = 4;
pub const SETCHOICE_ERR_NUMERIC: i32 = 5;
pub const SETCHOICE_ERR_VALIDATION: i32 = 6;
pub const SETCHOICE_ERR_DOMAIN: i32 = 7;
pub const SETCHOICE_ERR_CALIBRATION: i32 = 8;
pub const SETCHOICE_ERR_UNDEFINED: i32 = 9;
pub const SETCHOICE_ERR_PARSE: i32 = 10;
pub const SETCHOICE_ERR_CONFIG: i32 = 11;
pub const SETCHOICE_ERR_IO: i32 = 12;
pub const SETCHOICE_ERR_BUFFER: i32 = 13;
pub const SETCHOICE_ERR_PANIC: i32 = 14;

/// A trained model.
pub struct SetchoiceModel(AnyModel);

/// A dataset of choice tasks.
pub struct SetchoiceDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Shape(_) => SETCHOICE_ERR_SHAPE,
            Error::State(_) => SETCHOICE_ERR_STATE,
            Error::Numeric { .. } => SETCHOICE_ERR_NUMERIC,
            Error::Validation(_) => SETCHOICE_ERR_VALIDATION,
            Error::Domain(_) => SETCHOICE_ERR_DOMAIN,
            Error::Calibration(_) => SETCHOICE_ERR_CALIBRATION,
            Error::Undefined(_) => SETCHOICE_ERR_UNDEFINED,
            Error::Parse { .. } => SETCHOICE_ERR_PARSE,
            Error::Config(_) => SETCHOICE_ERR_CONFIG,
            Error::Io(_) => SETCHOICE_ERR_IO,
        };
        Failure::new(code, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure or panic and maps it to a status code.
fn guard(f: impl FnOnce() -> Outcome) -> i32 {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    let failure = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return SETCHOICE_OK,
        Ok(Err(fail)) => fail,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Failure::new(SETCHOICE_ERR_PANIC, format!("panic: {msg}"))
        }
    };
    set_last_error(failure.message);
    failure.code
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(SETCHOICE_ERR_NULL, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(SETCHOICE_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

unsafe fn task_arg(objects: *const f64, n: usize, d: usize) -> Result<ChoiceTask, Failure> {
    non_null(objects, "objects")?;
    let len = n
        .checked_mul(d)
        .ok_or_else(|| Failure::new(SETCHOICE_ERR_SHAPE, "n * d overflows"))?;
    if len == 0 {
        return Err(Failure::new(SETCHOICE_ERR_SHAPE, "a task needs n >= 1 objects of d >= 1 features"));
    }
    let values = std::slice::from_raw_parts(objects, len).to_vec();
    let x = Array2::from_shape_vec((n, d), values).map_err(|e| Failure::new(SETCHOICE_ERR_SHAPE, e.to_string()))?;
    Ok(ChoiceTask::new(x)?)
}

unsafe fn copy_text(text: &str, buffer: *mut c_char, capacity: usize, needed: *mut usize) -> Outcome {
    let size = text.len() + 1;
    if !needed.is_null() {
        *needed = size;
    }
    if buffer.is_null() || capacity < size {
        return Err(Failure::new(
            SETCHOICE_ERR_BUFFER,
            format!("buffer of {capacity} bytes, {size} needed"),
        ));
    }
    ptr::copy_nonoverlapping(text.as_ptr(), buffer.cast::<u8>(), text.len());
    *buffer.add(text.len()) = 0;
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Outcome {
    non_null(out, "out")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the calling thread's last failure, or NULL after a success.
/// The pointer stays valid until the thread's next call into this library.
#[no_mangle]
pub extern "C" fn setchoice_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint written by `setchoice_model_save` or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn setchoice_model_load(path: *const c_char, out: *mut *mut SetchoiceModel) -> i32 {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, SetchoiceModel(AnyModel::load(path)?))
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn setchoice_model_save(model: *const SetchoiceModel, path: *const c_char) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        (*model).0.save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Releases a model; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn setchoice_model_free(model: *mut SetchoiceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Copies the model's name (e.g. "feta") into `buffer`.
///
/// # Safety
/// `model` must be a live handle; `buffer` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn setchoice_model_name(
    model: *const SetchoiceModel,
    buffer: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        copy_text((*model).0.name(), buffer, capacity, needed)
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn setchoice_model_threshold(model: *const SetchoiceModel, out: *mut f64) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).0.threshold();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn setchoice_model_set_threshold(model: *mut SetchoiceModel, threshold: f64) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        if threshold.is_nan() {
            return Err(Failure::new(SETCHOICE_ERR_VALIDATION, "threshold is NaN"));
        }
        (*model).0.set_threshold(threshold);
        Ok(())
    })
}

/// Writes one utility per object into `scores` (length `n`).
///
/// # Safety
/// `objects` must hold `n * d` doubles and `scores` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn setchoice_model_scores(
    model: *const SetchoiceModel,
    objects: *const f64,
    n: usize,
    d: usize,
    scores: *mut f64,
) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        non_null(scores, "scores")?;
        let s = (*model).0.scores(&task_arg(objects, n, d)?)?;
        ptr::copy_nonoverlapping(s.as_ptr(), scores, n);
        Ok(())
    })
}

/// Writes 1 for each chosen object and 0 otherwise into `chosen` (length `n`).
///
/// # Safety
/// `objects` must hold `n * d` doubles and `chosen` room for `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn setchoice_model_choose(
    model: *const SetchoiceModel,
    objects: *const f64,
    n: usize,
    d: usize,
    chosen: *mut u8,
) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        non_null(chosen, "chosen")?;
        let label = (*model).0.choose(&task_arg(objects, n, d)?)?;
        for (k, &b) in label.bits().iter().enumerate() {
            *chosen.add(k) = u8::from(b);
        }
        Ok(())
    })
}

/// Index of the single best object.
///
/// # Safety
/// `objects` must hold `n * d` doubles and `index` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn setchoice_model_discrete_choose(
    model: *const SetchoiceModel,
    objects: *const f64,
    n: usize,
    d: usize,
    index: *mut usize,
) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        non_null(index, "index")?;
        *index = (*model).0.discrete_choose(&task_arg(objects, n, d)?)?;
        Ok(())
    })
}

/// Loads a dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn setchoice_dataset_load(path: *const c_char, out: *mut *mut SetchoiceDataset) -> i32 {
    guard(|| {
        let file = DatasetFile::load(str_arg(path, "path")?)?;
        put(out, SetchoiceDataset(file.dataset))
    })
}

/// Generates a synthetic dataset from a JSON generator spec, e.g.
/// `{"family":"pareto","instances":100,"task_size":8,"dim":2,"seed":1}`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn setchoice_dataset_generate(spec_json: *const c_char, out: *mut *mut SetchoiceDataset) -> i32 {
    guard(|| {
        let spec: GeneratorSpec = serde_json::from_str(str_arg(spec_json, "spec_json")?)
            .map_err(|e| Failure::new(SETCHOICE_ERR_CONFIG, format!("generator spec: {e}")))?;
        put(out, SetchoiceDataset(generate(&spec)?))
    })
}

/// # Safety
/// `dataset` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn setchoice_dataset_len(dataset: *const SetchoiceDataset, out: *mut usize) -> i32 {
    guard(|| {
        non_null(dataset, "dataset")?;
        non_null(out, "out")?;
        *out = (*dataset).0.len();
        Ok(())
    })
}

/// Releases a dataset; NULL is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn setchoice_dataset_free(dataset: *mut SetchoiceDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// The `[model]`, `[train]` and `[cv]` sections of an experiment config.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    cv: CvConfig,
}

/// Trains and calibrates a model on a whole dataset. `config_toml` holds the
/// `[model]`, `[train]` and `[cv]` sections of an experiment config; NULL
/// means all defaults (a FETA model).
///
/// # Safety
/// `dataset` must be a live handle, `config_toml` NULL or a NUL-terminated
/// string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn setchoice_fit(
    dataset: *const SetchoiceDataset,
    config_toml: *const c_char,
    out: *mut *mut SetchoiceModel,
) -> i32 {
    guard(|| {
        non_null(dataset, "dataset")?;
        let fc: FitConfig = if config_toml.is_null() {
            FitConfig::default()
        } else {
            toml::from_str(str_arg(config_toml, "config_toml")?)
                .map_err(|e| Failure::new(SETCHOICE_ERR_CONFIG, e.to_string()))?
        };
        let cfg = ExperimentConfig {
            model: fc.model,
            train: fc.train,
            cv: fc.cv,
            ..ExperimentConfig::default()
        };
        cfg.validate_settings()?;
        put(out, SetchoiceModel(fit_all(&cfg, &(*dataset).0)?))
    })
}

/// Copies the metric suite of `model` on `dataset` as a JSON object.
///
/// # Safety
/// Handles must be live; `buffer` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn setchoice_evaluate(
    model: *const SetchoiceModel,
    dataset: *const SetchoiceDataset,
    buffer: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        non_null(dataset, "dataset")?;
        let metrics: serde_json::Map<String, serde_json::Value> = evaluate(&(*model).0, &(*dataset).0)?
            .into_iter()
            .map(|(k, v)| (k, serde_json::Value::from(v)))
            .collect();
        copy_text(&serde_json::Value::Object(metrics).to_string(), buffer, capacity, needed)
    })
}
