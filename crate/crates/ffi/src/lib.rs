//! C interface to cortinv.
//!
//! Every function returns a [`CortinvStatus`]. On failure the message is
//! available from [`cortinv_last_error`] until the next call on the same
//! thread. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cortinv::audio::AudioBuffer;
use cortinv::config::ExperimentConfig;
use cortinv::eval::ppmc;
use cortinv::kalman::{kalman_smooth, KalmanParams};
use cortinv::mlp::{load_model, MlpModel};
use cortinv::pipeline::{load_inversion_model, InversionModel};
use cortinv::tv::{TvTrajectory, N_TV};
use cortinv::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CortinvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Provenance = 5,
    UndefinedCorrelation = 6,
    Panic = 7,
}

/// Trained regressor, optionally with its feature pipeline and smoother.
pub struct CortinvModel {
    net: MlpModel<f32>,
    full: Option<InversionModel>,
}

/// Tract-variable trajectory, row-major with 6 values per 10 ms frame.
pub struct CortinvTrajectory {
    tv: TvTrajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CortinvStatus {
    match e {
        Error::Io { .. } => CortinvStatus::Io,
        Error::InvalidArgument(_) | Error::Config(_) | Error::ShapeMismatch(_) => CortinvStatus::InvalidArgument,
        Error::Provenance(_) => CortinvStatus::Provenance,
        Error::UndefinedCorrelation(_) => CortinvStatus::UndefinedCorrelation,
        _ => CortinvStatus::Data,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (CortinvStatus, String)>) -> CortinvStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CortinvStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            CortinvStatus::Panic
        }
    }
}

fn lift<T>(r: cortinv::Result<T>) -> Result<T, (CortinvStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (CortinvStatus, String) {
    (CortinvStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (CortinvStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, (CortinvStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CortinvStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cortinv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Pearson correlation of two length-`n` sequences.
///
/// # Safety
/// `estimate` and `truth` must point to `n` doubles; `out` to one.
#[no_mangle]
pub unsafe extern "C" fn cortinv_ppmc(
    estimate: *const f64,
    truth: *const f64,
    n: usize,
    out: *mut f64,
) -> CortinvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = lift(ppmc(slice(estimate, n, "estimate")?, slice(truth, n, "truth")?))?;
        *out = r;
        Ok(())
    })
}

/// Constant-velocity Kalman smoothing of a `n_frames × 6` trajectory with
/// the same process (`q`) and observation (`r`) noise on every channel.
/// A nonzero `forward_only` skips the backward pass.
///
/// # Safety
/// `values` and `out` must each hold `6 * n_frames` doubles. They may alias.
#[no_mangle]
pub unsafe extern "C" fn cortinv_kalman_smooth(
    values: *const f64,
    n_frames: usize,
    q: f64,
    r: f64,
    forward_only: i32,
    out: *mut f64,
) -> CortinvStatus {
    guard(|| {
        let n = n_frames * N_TV;
        let input = lift(TvTrajectory::new(slice(values, n, "values")?.to_vec()))?;
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        let mut params = KalmanParams::uniform(q, r);
        params.forward_only = forward_only != 0;
        lift(params.validate())?;
        let smoothed = if input.is_empty() { input } else { lift(kalman_smooth(&input, &params))? };
        if n > 0 {
            ptr::copy_nonoverlapping(smoothed.values().as_ptr(), out, n);
        }
        Ok(())
    })
}

/// Loads a bare checkpoint. The model maps precomputed feature rows to tract
/// variables with [`cortinv_model_predict`].
///
/// # Safety
/// `checkpoint` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cortinv_model_load_checkpoint(
    checkpoint: *const c_char,
    out: *mut *mut CortinvModel,
) -> CortinvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let net = lift(load_model(&path(checkpoint, "checkpoint")?))?;
        *out = Box::into_raw(Box::new(CortinvModel { net, full: None }));
        Ok(())
    })
}

/// Loads a checkpoint together with the basis and smoother of the experiment
/// described by `config` (a TOML file), enabling [`cortinv_model_invert`].
///
/// # Safety
/// Both paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cortinv_model_load(
    config: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut CortinvModel,
) -> CortinvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = lift(ExperimentConfig::load(&path(config, "config")?))?;
        let full = lift(load_inversion_model(&cfg, &path(checkpoint, "checkpoint")?))?;
        *out = Box::into_raw(Box::new(CortinvModel {
            net: full.model.clone(),
            full: Some(full),
        }));
        Ok(())
    })
}

/// Width of one feature row expected by [`cortinv_model_predict`], or 0 for
/// a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cortinv_model_input_dim(model: *const CortinvModel) -> usize {
    model.as_ref().map_or(0, |m| m.net.arch.input_dim)
}

/// Network output (no smoothing) for `n_frames` feature rows.
///
/// # Safety
/// `features` must hold `n_frames * input_dim` doubles and `out`
/// `6 * n_frames`.
#[no_mangle]
pub unsafe extern "C" fn cortinv_model_predict(
    model: *const CortinvModel,
    features: *const f64,
    n_frames: usize,
    out: *mut f64,
) -> CortinvStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = slice(features, n_frames * m.net.arch.input_dim, "features")?;
        let tv = lift(m.net.predict(x))?;
        if n_frames > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            ptr::copy_nonoverlapping(tv.values().as_ptr(), out, n_frames * N_TV);
        }
        Ok(())
    })
}

/// Full inversion of mono audio: features, regression and smoothing. Needs a
/// model from [`cortinv_model_load`].
///
/// # Safety
/// `samples` must hold `n_samples` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cortinv_model_invert(
    model: *const CortinvModel,
    samples: *const f64,
    n_samples: usize,
    sample_rate: u32,
    out: *mut *mut CortinvTrajectory,
) -> CortinvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let full = m.full.as_ref().ok_or_else(|| {
            (
                CortinvStatus::InvalidArgument,
                "model was loaded without a configuration".to_string(),
            )
        })?;
        let audio = lift(AudioBuffer::new(slice(samples, n_samples, "samples")?.to_vec(), sample_rate, "ffi"))?;
        let tv = lift(full.invert(&audio))?;
        *out = Box::into_raw(Box::new(CortinvTrajectory { tv }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cortinv_model_free(model: *mut CortinvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of frames, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cortinv_trajectory_frames(traj: *const CortinvTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.tv.n_frames())
}

/// Row-major values (`6 * frames`), owned by the handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cortinv_trajectory_data(traj: *const CortinvTrajectory) -> *const f64 {
    traj.as_ref().map_or(ptr::null(), |t| t.tv.values().as_ptr())
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cortinv_trajectory_free(traj: *mut CortinvTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}
