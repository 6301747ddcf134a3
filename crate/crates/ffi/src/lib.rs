//! C interface to relaxprune.
//!
//! Models and datasets cross the boundary as opaque handles. Every call
//! returns an [`RpStatus`]; on failure a message for the calling thread is
//! available from [`rp_last_error`] until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use relaxprune::attacks::AttackSpec;
use relaxprune::config::ExperimentConfig;
use relaxprune::data::{load_csv, Dataset};
use relaxprune::harness::run_experiment;
use relaxprune::metrics::{accuracy, channel_sparsity, sparsity};
use relaxprune::pruners::{hard_threshold, prox_group_l0, prox_group_lasso, soft_threshold};
use relaxprune::{Checkpoint, Error, Model, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Dimension = 6,
    Parameter = 7,
    Format = 8,
    Contract = 9,
    Other = 10,
    Panic = 11,
}

/// A trained network.
pub struct RpModel(Model);

/// Labelled examples.
pub struct RpDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(RpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::Io { .. } => RpStatus::Io,
            Error::Parse { .. } => RpStatus::Parse,
            Error::Validation(_) => RpStatus::Validation,
            Error::Dimension(_) => RpStatus::Dimension,
            Error::Parameter(_) => RpStatus::Parameter,
            Error::Format(_) => RpStatus::Format,
            Error::Contract(_) => RpStatus::Contract,
            _ => RpStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RpStatus::NullPointer, format!("{what} is null"))
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> RpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RpStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RpStatus::InvalidString, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn model_arg<'a>(m: *const RpModel) -> Result<&'a Model, Failure> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null("values"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads the model stored in a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rp_checkpoint_load(
    path: *const c_char,
    out: *mut *mut RpModel,
) -> RpStatus {
    run(|| {
        let out = out_arg(out, "out")?;
        let ck = Checkpoint::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(RpModel(ck.model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rp_model_free(model: *mut RpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of `f64` values per input example.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rp_model_input_len(model: *const RpModel, out: *mut usize) -> RpStatus {
    run(|| {
        *out_arg(out, "out")? = model_arg(model)?.input_shape().iter().product();
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rp_model_classes(model: *const RpModel, out: *mut usize) -> RpStatus {
    run(|| {
        *out_arg(out, "out")? = model_arg(model)?.classes();
        Ok(())
    })
}

/// Predicted classes for `n` row-major examples.
///
/// # Safety
/// `inputs` must hold `n × input_len` values and `labels` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn rp_model_predict(
    model: *const RpModel,
    inputs: *const f64,
    n: usize,
    labels: *mut usize,
) -> RpStatus {
    run(|| {
        let m = model_arg(model)?;
        if n == 0 {
            return Ok(());
        }
        if inputs.is_null() || labels.is_null() {
            return Err(null("inputs or labels"));
        }
        let per: usize = m.input_shape().iter().product();
        let data = std::slice::from_raw_parts(inputs, n * per).to_vec();
        let x = Tensor::new(m.batch_shape(n), data)?;
        let pred = m.predict(&x)?;
        std::slice::from_raw_parts_mut(labels, n).copy_from_slice(&pred);
        Ok(())
    })
}

/// Percentage of weights that are exactly zero.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rp_model_sparsity(model: *const RpModel, out: *mut f64) -> RpStatus {
    run(|| {
        *out_arg(out, "out")? = sparsity(model_arg(model)?);
        Ok(())
    })
}

/// Percentage of channels whose weights are all zero.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rp_model_channel_sparsity(
    model: *const RpModel,
    out: *mut f64,
) -> RpStatus {
    run(|| {
        *out_arg(out, "out")? = channel_sparsity(model_arg(model)?)?;
        Ok(())
    })
}

/// Reads a CSV of feature columns followed by an integer label.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_load_csv(
    path: *const c_char,
    header: bool,
    out: *mut *mut RpDataset,
) -> RpStatus {
    run(|| {
        let out = out_arg(out, "out")?;
        let ds = load_csv(&path_arg(path, "path")?, header, None)?;
        *out = Box::into_raw(Box::new(RpDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_free(dataset: *mut RpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_len(dataset: *const RpDataset, out: *mut usize) -> RpStatus {
    run(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        *out_arg(out, "out")? = ds.0.len();
        Ok(())
    })
}

/// Accuracy in percent under an attack such as `"none"`, `"fgsm:eps=8/255"`
/// or `"ifgsm:eps=8/255,alpha=2/255,steps=20"`.
///
/// # Safety
/// Pointers must be valid; `attack` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rp_accuracy(
    model: *const RpModel,
    dataset: *const RpDataset,
    attack: *const c_char,
    seed: u64,
    out: *mut f64,
) -> RpStatus {
    run(|| {
        let m = model_arg(model)?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let spec: AttackSpec = str_arg(attack, "attack")?.parse()?;
        let ds = ds.0.with_feature_shape(m.input_shape())?;
        *out_arg(out, "out")? = accuracy(m, &ds, &spec, seed, 0)?;
        Ok(())
    })
}

/// In place: zero every value with `|v| ≤ threshold`.
///
/// # Safety
/// `values` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn rp_hard_threshold(
    values: *mut f64,
    len: usize,
    threshold: f64,
) -> RpStatus {
    run(|| {
        let v = slice_mut(values, len)?;
        let out = hard_threshold(&Tensor::from_vec(v.to_vec()), threshold)?;
        v.copy_from_slice(out.data());
        Ok(())
    })
}

/// In place: `sign(v)·max(|v| − threshold, 0)`.
///
/// # Safety
/// `values` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn rp_soft_threshold(
    values: *mut f64,
    len: usize,
    threshold: f64,
) -> RpStatus {
    run(|| {
        let v = slice_mut(values, len)?;
        let out = soft_threshold(&Tensor::from_vec(v.to_vec()), threshold)?;
        v.copy_from_slice(out.data());
        Ok(())
    })
}

/// In place group shrinkage of one group by `lambda`.
///
/// # Safety
/// `values` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn rp_prox_group_lasso(
    values: *mut f64,
    len: usize,
    lambda: f64,
) -> RpStatus {
    run(|| {
        let v = slice_mut(values, len)?;
        let out = prox_group_lasso(v, lambda)?;
        v.copy_from_slice(&out);
        Ok(())
    })
}

/// In place: zero the group when its norm is at most `√(2·lambda)`.
///
/// # Safety
/// `values` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn rp_prox_group_l0(values: *mut f64, len: usize, lambda: f64) -> RpStatus {
    run(|| {
        let v = slice_mut(values, len)?;
        let out = prox_group_l0(v, lambda)?;
        v.copy_from_slice(&out);
        Ok(())
    })
}

/// Runs the experiment described by a config file. `out_dir` may be null
/// to keep the config's own output directory.
///
/// # Safety
/// Strings must be NUL-terminated; `out_dir` may be null.
#[no_mangle]
pub unsafe extern "C" fn rp_run_experiment(
    config_path: *const c_char,
    out_dir: *const c_char,
) -> RpStatus {
    run(|| {
        let path = path_arg(config_path, "config path")?;
        let mut c = ExperimentConfig::load(Path::new(&path))?;
        if !out_dir.is_null() {
            c.out_dir = path_arg(out_dir, "out_dir")?;
        }
        run_experiment(&c).map_err(|e| e.context(format!("experiment {}", path.display())))?;
        Ok(())
    })
}
