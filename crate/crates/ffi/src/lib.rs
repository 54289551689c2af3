//! C ABI for the cedo toolkit.
//!
//! Every function returns a [`CedoStatus`]. On failure the message for the
//! calling thread is available from [`cedo_last_error_message`]. Strings handed
//! out by the library must be released with [`cedo_string_free`]; models with
//! [`cedo_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cedo::gms::{self, GmsConfig, GradientSet, OrthoMode};
use cedo::harness::{self, TrainConfig};
use cedo::losses::{compute_dlr_weights, supcon_with_weights};
use cedo::model::{self, GradScope, Head, ModelDims, ModelParams};
use cedo::numeric::RngStream;
use cedo::CedoError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CedoStatus {
    Ok = 0,
    InvalidArgument = 1,
    Shape = 2,
    State = 3,
    Numeric = 4,
    Degenerate = 5,
    Parse = 6,
    Config = 7,
    Io = 8,
    Divergence = 9,
    NullPointer = 10,
    Panic = 11,
}

impl From<&CedoError> for CedoStatus {
    fn from(e: &CedoError) -> Self {
        match e {
            CedoError::Shape(_) => CedoStatus::Shape,
            CedoError::Argument(_) => CedoStatus::InvalidArgument,
            CedoError::State(_) => CedoStatus::State,
            CedoError::Numeric(_) => CedoStatus::Numeric,
            CedoError::Degenerate(_) => CedoStatus::Degenerate,
            CedoError::Parse(_) => CedoStatus::Parse,
            CedoError::Config(_) => CedoStatus::Config,
            CedoError::Divergence { .. } => CedoStatus::Divergence,
            CedoError::Io { .. } => CedoStatus::Io,
        }
    }
}

/// Orthogonalization mode for [`cedo_orthogonalize`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CedoOrthoMode {
    Orthogonal = 0,
    Literal = 1,
}

/// Opaque model handle.
pub struct CedoModel {
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

enum Failure {
    Null(&'static str),
    Cedo(CedoError),
}

impl From<CedoError> for Failure {
    fn from(e: CedoError) -> Self {
        Failure::Cedo(e)
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> CedoStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CedoStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed for `{name}`"));
            CedoStatus::NullPointer
        }
        Ok(Err(Failure::Cedo(e))) => {
            set_last_error(e.to_string());
            CedoStatus::from(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            CedoStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return if len == 0 { Ok(&[]) } else { Err(Failure::Null(name)) };
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, name: &'static str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

unsafe fn c_str<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Cedo(CedoError::Argument(format!("`{name}` is not valid UTF-8"))))
}

fn gradient_set(t: &[f64], q: &[f64], v: &[f64]) -> Result<GradientSet, Failure> {
    Ok(GradientSet::new(
        t.to_vec().into(),
        q.to_vec().into(),
        v.to_vec().into(),
        GradScope::ClassifierOnly,
    )?)
}

/// Message describing the last failure on this thread. Empty after a success.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn cedo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cedo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` doubles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cedo_cosine(a: *const f64, b: *const f64, len: usize, out_value: *mut f64) -> CedoStatus {
    guard(|| {
        let a = slice(a, len, "a")?;
        let b = slice(b, len, "b")?;
        *out(out_value, "out_value")? = gms::cosine_similarity(a, b)?;
        Ok(())
    })
}

/// Minimum-norm point of the convex hull of three gradients of length `dim`.
/// Writes the simplex weights `(α_t, α_q, α_v)` to `out_alpha`, the combined
/// vector to `out_combined` (may be null) and its norm to `out_min_norm`.
///
/// # Safety
/// Input pointers must reference `dim` doubles, `out_alpha` three doubles and
/// `out_combined` (when non-null) `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cedo_pareto_min_norm(
    g_t: *const f64,
    g_q: *const f64,
    g_v: *const f64,
    dim: usize,
    out_alpha: *mut f64,
    out_combined: *mut f64,
    out_min_norm: *mut f64,
    out_stationary: *mut bool,
) -> CedoStatus {
    guard(|| {
        let gs = gradient_set(
            slice(g_t, dim, "g_t")?,
            slice(g_q, dim, "g_q")?,
            slice(g_v, dim, "g_v")?,
        )?;
        let alpha = slice_mut(out_alpha, 3, "out_alpha")?;
        let min_norm = out(out_min_norm, "out_min_norm")?;
        let sol = gms::pareto_min_norm(&gs, &GmsConfig::default())?;
        alpha.copy_from_slice(&sol.weights.as_array());
        *min_norm = sol.min_norm;
        if !out_combined.is_null() {
            slice_mut(out_combined, dim, "out_combined")?.copy_from_slice(&sol.combined);
        }
        if let Some(s) = out_stationary.as_mut() {
            *s = sol.stationary;
        }
        Ok(())
    })
}

/// Projection surgery: t and v against q, q against v. With `conflict_only`
/// a gradient is changed only when its cosine with the reference is negative.
///
/// # Safety
/// Every pointer must reference `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cedo_orthogonalize(
    g_t: *const f64,
    g_q: *const f64,
    g_v: *const f64,
    dim: usize,
    mode: CedoOrthoMode,
    conflict_only: bool,
    out_t: *mut f64,
    out_q: *mut f64,
    out_v: *mut f64,
) -> CedoStatus {
    guard(|| {
        let gs = gradient_set(
            slice(g_t, dim, "g_t")?,
            slice(g_q, dim, "g_q")?,
            slice(g_v, dim, "g_v")?,
        )?;
        let outs = [
            slice_mut(out_t, dim, "out_t")?,
            slice_mut(out_q, dim, "out_q")?,
            slice_mut(out_v, dim, "out_v")?,
        ];
        let cfg = GmsConfig {
            ortho_mode: match mode {
                CedoOrthoMode::Orthogonal => OrthoMode::Orthogonal,
                CedoOrthoMode::Literal => OrthoMode::Literal,
            },
            conflict_only,
            ..GmsConfig::default()
        };
        let (corrected, _) = gms::orthogonalize(&gs, &cfg)?;
        for (dst, src) in outs.into_iter().zip(corrected.as_array()) {
            dst.copy_from_slice(src);
        }
        Ok(())
    })
}

/// Rescaling weight for an answer seen `count_m` times among the `count_big_m`
/// samples of its question type: `w = 1/(M·m)` and `W = ln(1 + e^w)`.
///
/// # Safety
/// `out_w` and `out_weight` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cedo_dlr_weight(
    count_m: usize,
    count_big_m: usize,
    out_w: *mut f64,
    out_weight: *mut f64,
) -> CedoStatus {
    guard(|| {
        if count_m == 0 || count_m > count_big_m {
            return Err(CedoError::Argument(format!("need 0 < m <= M, got m={count_m} M={count_big_m}")).into());
        }
        let pairs = std::iter::repeat_n((0, 0), count_m).chain(std::iter::repeat_n((0, 1), count_big_m - count_m));
        let table = compute_dlr_weights(pairs)?;
        let e = table
            .get(0, 0)
            .ok_or_else(|| CedoError::State("weight table lost its entry".into()))?;
        *out(out_w, "out_w")? = e.w;
        *out(out_weight, "out_weight")? = e.weight;
        Ok(())
    })
}

/// Weighted supervised-contrastive loss over `n` row-major features of length
/// `dim` with per-anchor weights. `out_grads` (n×dim, may be null) receives the
/// gradient with respect to the features.
///
/// # Safety
/// `features` must reference `n·dim` doubles, `answers` and `anchor_weights` `n`
/// entries, and `out_grads` (when non-null) `n·dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cedo_weighted_supcon(
    features: *const f64,
    n: usize,
    dim: usize,
    answers: *const usize,
    anchor_weights: *const f64,
    temperature: f64,
    normalize: bool,
    out_value: *mut f64,
    out_grads: *mut f64,
) -> CedoStatus {
    guard(|| {
        let x = slice(features, n * dim, "features")?;
        if answers.is_null() {
            return Err(Failure::Null("answers"));
        }
        let answers = std::slice::from_raw_parts(answers, n);
        let w = slice(anchor_weights, n, "anchor_weights")?;
        let rows: Vec<&[f64]> = if dim == 0 {
            vec![&[]; n]
        } else {
            x.chunks(dim).collect()
        };
        let res = supcon_with_weights(&rows, answers, w, temperature, normalize)?;
        *out(out_value, "out_value")? = res.value;
        if !out_grads.is_null() {
            let g = slice_mut(out_grads, n * dim, "out_grads")?;
            for (dst, src) in g.chunks_mut(dim.max(1)).zip(&res.grads) {
                dst.copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// Creates a Glorot-initialised model.
///
/// # Safety
/// `out_model` must be writable. The handle must be released with [`cedo_model_free`].
#[no_mangle]
pub unsafe extern "C" fn cedo_model_new(
    question_dim: usize,
    image_dim: usize,
    hidden_dim: usize,
    fused_dim: usize,
    num_answers: usize,
    seed: u64,
    out_model: *mut *mut CedoModel,
) -> CedoStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let dims = ModelDims {
            question_dim,
            image_dim,
            hidden_dim,
            fused_dim,
            num_answers,
        };
        let params = ModelParams::init(dims, &mut RngStream::new(seed))?;
        *slot = Box::into_raw(Box::new(CedoModel { params }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cedo_model_free(model: *mut CedoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total trainable parameter count.
///
/// # Safety
/// `model` must be a live handle and `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn cedo_model_num_params(model: *const CedoModel, out_count: *mut usize) -> CedoStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        *out(out_count, "out_count")? = m.params.all_values().len();
        Ok(())
    })
}

/// Forward pass for one sample. Each logits buffer holds `num_answers` doubles
/// and may be null to skip that head.
///
/// # Safety
/// `model` must be a live handle; input and output buffers must match the model dims.
#[no_mangle]
pub unsafe extern "C" fn cedo_model_forward(
    model: *const CedoModel,
    question: *const f64,
    image: *const f64,
    out_joint: *mut f64,
    out_question: *mut f64,
    out_image: *mut f64,
) -> CedoStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let d = m.params.dims;
        let q = slice(question, d.question_dim, "question")?;
        let v = slice(image, d.image_dim, "image")?;
        let cache = model::forward_sample(&m.params, q, v)?;
        for (ptr_out, head) in [
            (out_joint, Head::Joint),
            (out_question, Head::Question),
            (out_image, Head::Image),
        ] {
            if !ptr_out.is_null() {
                std::slice::from_raw_parts_mut(ptr_out, d.num_answers).copy_from_slice(cache.logits(head));
            }
        }
        Ok(())
    })
}

/// Writes the model to a JSON checkpoint.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn cedo_model_save(model: *const CedoModel, path: *const c_char) -> CedoStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let path = PathBuf::from(c_str(path, "path")?);
        model::save_checkpoint(&m.params, &path)?;
        Ok(())
    })
}

/// Loads a checkpoint written by [`cedo_model_save`] or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn cedo_model_load(path: *const c_char, out_model: *mut *mut CedoModel) -> CedoStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let path = PathBuf::from(c_str(path, "path")?);
        let params = model::load_checkpoint(&path)?;
        *slot = Box::into_raw(Box::new(CedoModel { params }));
        Ok(())
    })
}

/// Runs a full training job from a JSON config (same schema as the CLI's
/// `--config`) and returns the metrics as a JSON string in `out_metrics_json`.
///
/// # Safety
/// `config_json` must be a NUL-terminated UTF-8 string and `out_metrics_json`
/// writable. Release the result with [`cedo_string_free`].
#[no_mangle]
pub unsafe extern "C" fn cedo_train_json(config_json: *const c_char, out_metrics_json: *mut *mut c_char) -> CedoStatus {
    guard(|| {
        let slot = out(out_metrics_json, "out_metrics_json")?;
        *slot = ptr::null_mut();
        let text = c_str(config_json, "config_json")?;
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| CedoError::Config(e.to_string()))?;
        let metrics = harness::train(&cfg)?;
        let json = serde_json::to_string(&metrics).map_err(|e| CedoError::Parse(e.to_string()))?;
        *slot = CString::new(json)
            .map_err(|e| CedoError::Parse(e.to_string()))?
            .into_raw();
        Ok(())
    })
}
