//! C ABI over the nmfx library.
//!
//! Feature tensors and fitted models cross the boundary as opaque handles
//! that the caller releases with the matching `*_free` function. Every
//! fallible call returns an [`NmfxStatus`]; on failure a description is
//! available from [`nmfx_last_error`] on the same thread until the next
//! failing call. Arrays are row-major `double` buffers whose length the
//! caller passes explicitly and which are checked before any write.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::{Array4, ArrayView4};
use nmfx::heatmap::HeatmapStack;
use nmfx::pipeline::factorize;
use nmfx::{project_features, Error, FeatureTensor, NmfConfig, NnlsConfig, SavedModel};

/// Result of every fallible call. Values 2–4 match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NmfxStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Malformed input, bad shape or invalid configuration.
    InvalidInput = 2,
    /// The factorization diverged or NNLS exhausted its budget.
    SolverFailure = 3,
    /// A file could not be read or written.
    Io = 4,
    /// A caller-provided output buffer has the wrong length.
    BufferSize = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

/// Factorization settings; obtain defaults from [`nmfx_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmfxConfig {
    pub k: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub eps: f64,
}

impl From<NmfxConfig> for NmfConfig {
    fn from(c: NmfxConfig) -> Self {
        NmfConfig { k: c.k, max_iters: c.max_iters, rel_tol: c.rel_tol, seed: c.seed, eps: c.eps }
    }
}

/// Opaque feature tensor `(n, p, d1, d2)`.
pub struct NmfxFeatures(FeatureTensor);

/// Opaque fitted model together with the grid it was fitted on.
pub struct NmfxModel(SavedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

struct Failure(NmfxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            3 => NmfxStatus::SolverFailure,
            4 => NmfxStatus::Io,
            _ => NmfxStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(NmfxStatus::NullPointer, format!("{name} is null"))
}

/// Runs `f`, recording any error or panic for [`nmfx_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NmfxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NmfxStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            NmfxStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(NmfxStatus::InvalidInput, format!("{name} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_buffer<'a>(buf: *mut f64, len: usize, needed: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if buf.is_null() {
        return Err(null(name));
    }
    if len != needed {
        return Err(Failure(NmfxStatus::BufferSize, format!("{name} holds {len} values, {needed} required")));
    }
    Ok(std::slice::from_raw_parts_mut(buf, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn dims_len(dims: [usize; 4]) -> Result<usize, Failure> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Failure(NmfxStatus::InvalidInput, format!("shape {dims:?} overflows")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nmfx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn nmfx_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Default settings for `k` topics: 500 iterations, relative tolerance
/// 1e-6, seed 0, denominator guard 1e-12.
#[no_mangle]
pub extern "C" fn nmfx_config_default(k: usize) -> NmfxConfig {
    let c = NmfConfig::new(k);
    NmfxConfig { k: c.k, max_iters: c.max_iters, rel_tol: c.rel_tol, seed: c.seed, eps: c.eps }
}

/// Copies a row-major `(n, p, d1, d2)` buffer into a new feature handle.
///
/// # Safety
/// `data` must point to `n * p * d1 * d2` readable doubles and `out` must be
/// a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn nmfx_features_from_buffer(
    data: *const f64,
    n: usize,
    p: usize,
    d1: usize,
    d2: usize,
    out: *mut *mut NmfxFeatures,
) -> NmfxStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = dims_len([n, p, d1, d2])?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let array = Array4::from_shape_vec((n, p, d1, d2), values)
            .map_err(|e| Failure(NmfxStatus::InvalidInput, e.to_string()))?;
        store(out, NmfxFeatures(FeatureTensor::new(array)?));
        Ok(())
    })
}

/// Loads a `(n, p, d1, d2)` feature tensor from an .npy file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nmfx_features_load(path: *const c_char, out: *mut *mut NmfxFeatures) -> NmfxStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        store(out, NmfxFeatures(FeatureTensor::load(path)?));
        Ok(())
    })
}

/// Writes the four axis lengths `(n, p, d1, d2)` into `shape`.
///
/// # Safety
/// `features` must be a live handle and `shape` must point to 4 writable
/// `size_t` values.
#[no_mangle]
pub unsafe extern "C" fn nmfx_features_shape(features: *const NmfxFeatures, shape: *mut usize) -> NmfxStatus {
    guard(|| {
        let f = handle(features, "features")?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        std::slice::from_raw_parts_mut(shape, 4).copy_from_slice(&f.0.shape());
        Ok(())
    })
}

/// Releases a feature handle; NULL is ignored.
///
/// # Safety
/// `features` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nmfx_features_free(features: *mut NmfxFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Fits unsupervised NMF.
///
/// # Safety
/// `features` must be a live handle, `config` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nmfx_nmf_fit(
    features: *const NmfxFeatures,
    config: *const NmfxConfig,
    out: *mut *mut NmfxModel,
) -> NmfxStatus {
    guard(|| {
        let f = handle(features, "features")?;
        let cfg: NmfConfig = (*handle(config, "config")?).into();
        if out.is_null() {
            return Err(null("out"));
        }
        let model = factorize(&f.0, &cfg, None, 0.0)?;
        store(out, NmfxModel(SavedModel { model, dims: f.0.grid(), label_names: Vec::new() }));
        Ok(())
    })
}

/// Fits label-guided SSNMF. `labels` holds one class index in
/// `[0, classes)` per image, or -1 for an unlabeled image. Class names are
/// recorded as `class0`, `class1`, ...
///
/// # Safety
/// `labels` must point to `n` readable values where `n` is the image count
/// of `features`; the other pointers as for [`nmfx_nmf_fit`].
#[no_mangle]
pub unsafe extern "C" fn nmfx_ssnmf_fit(
    features: *const NmfxFeatures,
    labels: *const i64,
    classes: usize,
    lambda: f64,
    config: *const NmfxConfig,
    out: *mut *mut NmfxModel,
) -> NmfxStatus {
    guard(|| {
        let f = handle(features, "features")?;
        let cfg: NmfConfig = (*handle(config, "config")?).into();
        if labels.is_null() {
            return Err(null("labels"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Failure(NmfxStatus::InvalidInput, format!("lambda must be positive, got {lambda}")));
        }
        let raw = std::slice::from_raw_parts(labels, f.0.images());
        let per_image = raw
            .iter()
            .map(|&l| match l {
                -1 => Ok(None),
                l if l >= 0 && (l as u64) < classes as u64 => Ok(Some(l as usize)),
                l => Err(Failure(
                    NmfxStatus::InvalidInput,
                    format!("label {l} is neither -1 nor in [0, {classes})"),
                )),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let names: Vec<String> = (0..classes).map(|c| format!("class{c}")).collect();
        let model = factorize(&f.0, &cfg, Some((&per_image, names.clone())), lambda)?;
        store(out, NmfxModel(SavedModel { model, dims: f.0.grid(), label_names: names }));
        Ok(())
    })
}

/// Number of topics.
///
/// # Safety
/// `model` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_k(model: *const NmfxModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.model.k())
}

/// Number of feature channels `p`.
///
/// # Safety
/// `model` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_channels(model: *const NmfxModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.model.channels())
}

/// Number of spatial locations `N = n * d1 * d2` of the training grid.
///
/// # Safety
/// `model` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_locations(model: *const NmfxModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dims.locations())
}

/// Number of label classes (0 for an unsupervised model).
///
/// # Safety
/// `model` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_classes(model: *const NmfxModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.model.classifier.as_ref().map_or(0, |b| b.nrows()))
}

/// Iterations performed by the fit.
///
/// # Safety
/// `model` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_iterations(model: *const NmfxModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.model.iterations_run)
}

/// Length of the objective trace (initial value plus one per iteration).
///
/// # Safety
/// `model` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_trace_len(model: *const NmfxModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.model.objective_trace.len())
}

/// Copies the `(p, K)` topic matrix.
///
/// # Safety
/// `model` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_copy_topics(model: *const NmfxModel, buf: *mut f64, len: usize) -> NmfxStatus {
    guard(|| {
        let m = &handle(model, "model")?.0.model;
        let out = out_buffer(buf, len, m.topics.len(), "buf")?;
        out.iter_mut().zip(m.topics.iter()).for_each(|(o, &v)| *o = v);
        Ok(())
    })
}

/// Copies the `(K, N)` weight matrix.
///
/// # Safety
/// As for [`nmfx_model_copy_topics`].
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_copy_weights(model: *const NmfxModel, buf: *mut f64, len: usize) -> NmfxStatus {
    guard(|| {
        let m = &handle(model, "model")?.0.model;
        let out = out_buffer(buf, len, m.weights.len(), "buf")?;
        out.iter_mut().zip(m.weights.iter()).for_each(|(o, &v)| *o = v);
        Ok(())
    })
}

/// Copies the `(classes, K)` classifier matrix of an SSNMF model.
///
/// # Safety
/// As for [`nmfx_model_copy_topics`].
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_copy_classifier(model: *const NmfxModel, buf: *mut f64, len: usize) -> NmfxStatus {
    guard(|| {
        let m = &handle(model, "model")?.0.model;
        let b = m
            .classifier
            .as_ref()
            .ok_or_else(|| Failure(NmfxStatus::InvalidInput, "model has no classifier (fitted without labels)".into()))?;
        let out = out_buffer(buf, len, b.len(), "buf")?;
        out.iter_mut().zip(b.iter()).for_each(|(o, &v)| *o = v);
        Ok(())
    })
}

/// Copies the objective trace.
///
/// # Safety
/// As for [`nmfx_model_copy_topics`]; `len` must equal [`nmfx_model_trace_len`].
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_copy_trace(model: *const NmfxModel, buf: *mut f64, len: usize) -> NmfxStatus {
    guard(|| {
        let trace = &handle(model, "model")?.0.model.objective_trace;
        out_buffer(buf, len, trace.len(), "buf")?.copy_from_slice(trace);
        Ok(())
    })
}

/// Writes the model directory (A.npy, S.npy, optional B.npy, meta.json).
///
/// # Safety
/// `model` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_save(model: *const NmfxModel, dir: *const c_char) -> NmfxStatus {
    guard(|| {
        let m = handle(model, "model")?;
        m.0.save(path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// Loads a model directory written by [`nmfx_model_save`] or the CLI.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_load(dir: *const c_char, out: *mut *mut NmfxModel) -> NmfxStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        store(out, NmfxModel(SavedModel::load(dir)?));
        Ok(())
    })
}

/// Releases a model handle; NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nmfx_model_free(model: *mut NmfxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Projects held-out features onto the model's frozen topics by NNLS and
/// writes the `(n, K, d1, d2)` heat tensor into `heat`.
///
/// # Safety
/// `model` and `features` must be live handles; `heat` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nmfx_project(
    model: *const NmfxModel,
    features: *const NmfxFeatures,
    kkt_tol: f64,
    max_iters: usize,
    heat: *mut f64,
    len: usize,
) -> NmfxStatus {
    guard(|| {
        let m = &handle(model, "model")?.0.model;
        let f = &handle(features, "features")?.0;
        let cfg = NnlsConfig { kkt_tol, max_iters };
        cfg.validate()?;
        let [n, _, d1, d2] = f.shape();
        let needed = dims_len([n, m.k(), d1, d2])?;
        let out = out_buffer(heat, len, needed, "heat")?;
        let result = project_features(m, f, &cfg)?;
        out.iter_mut().zip(result.iter()).for_each(|(o, &v)| *o = v);
        Ok(())
    })
}

/// Normalizes each image's heat to a maximum of 1 and bilinearly upsamples
/// a row-major `(n, K, d1, d2)` tensor to `(n, K, height, width)`.
///
/// # Safety
/// `heat` must point to `n * k * d1 * d2` readable doubles and `out` to
/// `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nmfx_heatmaps(
    heat: *const f64,
    n: usize,
    k: usize,
    d1: usize,
    d2: usize,
    height: usize,
    width: usize,
    out: *mut f64,
    len: usize,
) -> NmfxStatus {
    guard(|| {
        if heat.is_null() {
            return Err(null("heat"));
        }
        let input_len = dims_len([n, k, d1, d2])?;
        let needed = dims_len([n, k, height, width])?;
        let dst = out_buffer(out, len, needed, "out")?;
        let src = std::slice::from_raw_parts(heat, input_len);
        let view = ArrayView4::from_shape((n, k, d1, d2), src)
            .map_err(|e| Failure(NmfxStatus::InvalidInput, e.to_string()))?;
        let stack = HeatmapStack::build(view, height, width)?;
        dst.iter_mut().zip(stack.maps.iter()).for_each(|(o, &v)| *o = v);
        Ok(())
    })
}
