//! C ABI over the `adarc` crate.
//!
//! Datasets and models cross the boundary as opaque handles owned by the
//! caller and released with the matching `_free` function. Every fallible
//! call returns an [`AdarcStatus`]; on failure the message is available via
//! [`adarc_last_error`] on the same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use adarc::adapt::{adapt, AdaptConfig};
use adarc::csbm::{generate, CsbmParams};
use adarc::losses::{pic_loss, LossKind};
use adarc::model::ModelDims;
use adarc::pretrain::{evaluate, train_source, TrainConfig};
use adarc::theory::{closed_form_accuracy, optimal_gamma, TheoryPoint};
use adarc::tta::BaseTta;
use adarc::{Dataset, Error, GprModel, Normalization, PropagationOperator, SoftPrediction};
use ndarray::ArrayView2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdarcStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8, or a parameter out of range.
    InvalidArgument = 1,
    Io = 2,
    /// A file exists but does not parse.
    Format = 3,
    /// NaN, overflow or divergence.
    Numerical = 4,
    /// Representations with (near) zero variance.
    Degenerate = 5,
    /// Shapes that do not fit together.
    DimensionMismatch = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdarcNormalization {
    Symmetric = 0,
    Row = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdarcLoss {
    Pic = 0,
    Entropy = 1,
    Pseudo = 2,
    Diff = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdarcBase {
    Erm = 0,
    Tent = 1,
    T3a = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdarcTrainOptions {
    pub hidden: usize,
    pub hops: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub patience: usize,
    pub seed: u64,
    pub normalization: AdarcNormalization,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdarcAdaptOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss: AdarcLoss,
    pub base: AdarcBase,
    pub tent_steps: usize,
    pub tent_lr: f64,
    pub t3a_keep: usize,
    pub normalization: AdarcNormalization,
}

/// Opaque dataset handle.
pub struct AdarcDataset(Dataset);

/// Opaque model handle.
pub struct AdarcModel(GprModel);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into_bytes());
}

fn status_of(error: &Error) -> AdarcStatus {
    match error {
        Error::Io(_) => AdarcStatus::Io,
        Error::Format { .. } | Error::Csv(_) | Error::Json(_) => AdarcStatus::Format,
        Error::Numerical(_) => AdarcStatus::Numerical,
        Error::DegenerateRepresentation { .. } => AdarcStatus::Degenerate,
        Error::DimensionMismatch { .. } | Error::StaleCache { .. } => AdarcStatus::DimensionMismatch,
        _ => AdarcStatus::InvalidArgument,
    }
}

struct Failure(AdarcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(message: &str) -> Failure {
    Failure(AdarcStatus::InvalidArgument, message.to_owned())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AdarcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            AdarcStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AdarcStatus::Internal
        }
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(invalid("path is null"));
    }
    let s = CStr::from_ptr(ptr).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    out.write(value);
    Ok(())
}

impl From<AdarcNormalization> for Normalization {
    fn from(n: AdarcNormalization) -> Self {
        match n {
            AdarcNormalization::Symmetric => Normalization::Symmetric,
            AdarcNormalization::Row => Normalization::Row,
        }
    }
}

impl From<AdarcLoss> for LossKind {
    fn from(l: AdarcLoss) -> Self {
        match l {
            AdarcLoss::Pic => LossKind::Pic,
            AdarcLoss::Entropy => LossKind::Entropy,
            AdarcLoss::Pseudo => LossKind::Pseudo,
            AdarcLoss::Diff => LossKind::Diff,
        }
    }
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `capacity`, into `buffer`. Returns the full message length
/// plus one, so a return value above `capacity` means truncation. An empty
/// message means the last call succeeded.
///
/// # Safety
/// `buffer` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn adarc_last_error(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buffer as *mut u8, n);
            *buffer.add(n) = 0;
        }
        bytes.len() + 1
    })
}

#[no_mangle]
pub extern "C" fn adarc_train_options_default() -> AdarcTrainOptions {
    let t = TrainConfig::default();
    AdarcTrainOptions {
        hidden: 32,
        hops: 9,
        learning_rate: t.learning_rate,
        epochs: t.epochs,
        weight_decay: t.weight_decay,
        patience: t.patience,
        seed: t.seed,
        normalization: AdarcNormalization::Symmetric,
    }
}

#[no_mangle]
pub extern "C" fn adarc_adapt_options_default() -> AdarcAdaptOptions {
    let a = AdaptConfig::default();
    AdarcAdaptOptions {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        loss: AdarcLoss::Pic,
        base: AdarcBase::Erm,
        tent_steps: 10,
        tent_lr: 0.05,
        t3a_keep: 100,
        normalization: AdarcNormalization::Symmetric,
    }
}

/// Samples a two-class CSBM graph with every entry of the class centre equal
/// to `mu_entry` and every entry of the shared shift equal to `delta_entry`.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a new handle.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn adarc_csbm_generate(
    num_nodes: usize,
    dim: usize,
    mu_entry: f64,
    delta_entry: f64,
    avg_degree: f64,
    homophily: f64,
    noise_std: f64,
    seed: u64,
    out: *mut *mut AdarcDataset,
) -> AdarcStatus {
    guard(|| {
        let mut params = CsbmParams::uniform(num_nodes, dim, mu_entry, delta_entry, avg_degree, homophily, seed);
        params.noise_std = noise_std;
        let ds = generate(&params)?;
        write_out(out, Box::into_raw(Box::new(AdarcDataset(ds))))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adarc_dataset_load(path: *const c_char, out: *mut *mut AdarcDataset) -> AdarcStatus {
    guard(|| {
        let ds = Dataset::load(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(AdarcDataset(ds))))
    })
}

/// # Safety
/// `dataset` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn adarc_dataset_save(dataset: *const AdarcDataset, path: *const c_char) -> AdarcStatus {
    guard(|| {
        let ds = deref(dataset, "dataset")?;
        ds.0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Returns 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn adarc_dataset_num_nodes(dataset: *const AdarcDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.num_nodes())
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn adarc_dataset_num_classes(dataset: *const AdarcDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.num_classes())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adarc_dataset_free(dataset: *mut AdarcDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains a fresh model on the `train` mask, selecting on `val`.
///
/// # Safety
/// `dataset` must be a live handle; `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn adarc_pretrain(
    dataset: *const AdarcDataset,
    options: *const AdarcTrainOptions,
    out: *mut *mut AdarcModel,
) -> AdarcStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.0;
        let o = *deref(options, "options")?;
        if o.hidden == 0 || o.hops == 0 {
            return Err(invalid("hidden and hops must be positive"));
        }
        let dims = ModelDims {
            input: ds.feature_dim(),
            hidden: o.hidden,
            classes: ds.num_classes(),
            hops: o.hops,
        };
        let config = TrainConfig {
            learning_rate: o.learning_rate,
            epochs: o.epochs,
            weight_decay: o.weight_decay,
            patience: o.patience,
            seed: o.seed,
        };
        let op = PropagationOperator::new(ds.graph(), o.normalization.into());
        let (model, _) = train_source(GprModel::init(dims, o.seed), ds, &op, &config)?;
        write_out(out, Box::into_raw(Box::new(AdarcModel(model))))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adarc_model_load(path: *const c_char, out: *mut *mut AdarcModel) -> AdarcStatus {
    guard(|| {
        let model = GprModel::load(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(AdarcModel(model))))
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn adarc_model_save(model: *const AdarcModel, path: *const c_char) -> AdarcStatus {
    guard(|| {
        deref(model, "model")?.0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Number of hop weights, `K + 1`. Returns 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn adarc_model_num_gamma(model: *const AdarcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.gamma.len())
}

/// Copies the hop weights into `out`, which must hold
/// [`adarc_model_num_gamma`] values.
///
/// # Safety
/// `model` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn adarc_model_gamma(model: *const AdarcModel, out: *mut f64, len: usize) -> AdarcStatus {
    guard(|| {
        let gamma = &deref(model, "model")?.0.gamma;
        if out.is_null() || len != gamma.len() {
            return Err(invalid(&format!("gamma buffer must hold {} values", gamma.len())));
        }
        for (i, g) in gamma.iter().enumerate() {
            *out.add(i) = *g;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adarc_model_free(model: *mut AdarcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Adapts the hop weights of `model` to `dataset` without labels. The
/// adapted model is returned as a new handle; `model` is left unchanged.
/// When `predictions` is non-null it receives one class index per node.
///
/// # Safety
/// Handles must be live, `options` and `out` valid, and `predictions` null
/// or pointing to `num_nodes` writable slots.
#[no_mangle]
pub unsafe extern "C" fn adarc_adapt(
    model: *const AdarcModel,
    dataset: *const AdarcDataset,
    options: *const AdarcAdaptOptions,
    out: *mut *mut AdarcModel,
    predictions: *mut usize,
    num_nodes: usize,
) -> AdarcStatus {
    guard(|| {
        let model = &deref(model, "model")?.0;
        let ds = &deref(dataset, "dataset")?.0;
        let o = *deref(options, "options")?;
        if !predictions.is_null() && num_nodes != ds.num_nodes() {
            return Err(invalid(&format!("prediction buffer must hold {} values", ds.num_nodes())));
        }
        let base = match o.base {
            AdarcBase::Erm => BaseTta::Erm,
            AdarcBase::Tent => BaseTta::Tent {
                steps: o.tent_steps,
                lr: o.tent_lr,
            },
            AdarcBase::T3a => BaseTta::T3a {
                keep_per_class: o.t3a_keep,
            },
        };
        let config = AdaptConfig {
            learning_rate: o.learning_rate,
            epochs: o.epochs,
            loss: o.loss.into(),
            base,
            ..AdaptConfig::default()
        };
        let op = PropagationOperator::new(ds.graph(), o.normalization.into());
        let outcome = adapt(model, ds, &op, &config).map_err(|f| Failure::from(f.error))?;
        if !predictions.is_null() {
            for (i, c) in outcome.prediction.argmax().into_iter().enumerate() {
                *predictions.add(i) = c;
            }
        }
        write_out(out, Box::into_raw(Box::new(AdarcModel(outcome.model))))
    })
}

/// Accuracy of `model` on `dataset`, restricted to the named mask
/// (`train`, `val`, `test`) or over all nodes when `mask` is null.
///
/// # Safety
/// Handles must be live, `mask` null or NUL-terminated, `accuracy` valid.
#[no_mangle]
pub unsafe extern "C" fn adarc_evaluate(
    model: *const AdarcModel,
    dataset: *const AdarcDataset,
    mask: *const c_char,
    normalization: AdarcNormalization,
    accuracy: *mut f64,
) -> AdarcStatus {
    guard(|| {
        let model = &deref(model, "model")?.0;
        let ds = &deref(dataset, "dataset")?.0;
        let mask = if mask.is_null() {
            None
        } else {
            let name = CStr::from_ptr(mask).to_str().map_err(|_| invalid("mask is not UTF-8"))?;
            Some(ds.mask(name).ok_or_else(|| invalid(&format!("unknown mask `{name}`")))?)
        };
        let op = PropagationOperator::new(ds.graph(), normalization.into());
        write_out(accuracy, evaluate(model, ds, &op, mask)?)
    })
}

/// Intra-class variance over total variance of the row-major `n x h`
/// representations `z` under the row-major `n x c` class probabilities.
///
/// # Safety
/// `z` must point to `n * h` doubles, `probs` to `n * c`, `loss` be valid.
#[no_mangle]
pub unsafe extern "C" fn adarc_pic_loss(
    z: *const f64,
    n: usize,
    h: usize,
    probs: *const f64,
    c: usize,
    loss: *mut f64,
) -> AdarcStatus {
    guard(|| {
        if z.is_null() || probs.is_null() {
            return Err(invalid("input array is null"));
        }
        let z = ArrayView2::from_shape((n, h), std::slice::from_raw_parts(z, n * h)).map_err(|e| invalid(&e.to_string()))?;
        let p = ArrayView2::from_shape((n, c), std::slice::from_raw_parts(probs, n * c))
            .map_err(|e| invalid(&e.to_string()))?;
        let prediction = SoftPrediction::new(p.to_owned())?;
        write_out(loss, pic_loss(z, &prediction)?.loss)
    })
}

/// Accuracy of the best linear classifier on one-layer aggregated CSBM
/// representations with hop weight `gamma`.
#[no_mangle]
pub extern "C" fn adarc_closed_form_accuracy(mu_norm: f64, degree: f64, homophily: f64, gamma: f64) -> f64 {
    closed_form_accuracy(&TheoryPoint::new(mu_norm, degree, homophily, gamma))
}

/// The hop weight that maximizes [`adarc_closed_form_accuracy`].
#[no_mangle]
pub extern "C" fn adarc_optimal_gamma(degree: f64, homophily: f64) -> f64 {
    optimal_gamma(degree, homophily)
}
