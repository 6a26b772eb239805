//! C ABI for clp-lab.
//!
//! Objects are passed as opaque handles created by `clp_*_new`/`_load`
//! functions and released with the matching `_free`. Every fallible call
//! returns a [`ClpStatus`]; on failure the message is available from
//! [`clp_last_error_message`] on the same thread. Output arrays are
//! caller-allocated and sized by the `_dims` queries.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use clp_lab::conditioning::ParameterBundle;
use clp_lab::env::BanditEnv;
use clp_lab::theory::{mixing_bound, BoundInputs};
use clp_lab::weightings::{f_mix, inv_f_mix, KLWeight, RewardWeights};
use clp_lab::{oracle, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Parse = 4,
    Io = 5,
    Divergence = 6,
    Config = 7,
    Layout = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque environment handle.
pub struct ClpEnv(BanditEnv);

/// Opaque CLP parameter bundle handle.
pub struct ClpBundle(ParameterBundle);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> ClpStatus {
    match err {
        Error::Dimension(_) => ClpStatus::Dimension,
        Error::InvalidArgument(_) => ClpStatus::InvalidArgument,
        Error::Layout(_) => ClpStatus::Layout,
        Error::Divergence { .. } => ClpStatus::Divergence,
        Error::Parse { .. } => ClpStatus::Parse,
        Error::Config(_) => ClpStatus::Config,
        Error::Io(_) => ClpStatus::Io,
    }
}

struct Fail(ClpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ClpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ClpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ClpStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(ClpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ClpStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn weights_arg(w: *const f64, len: usize) -> Result<RewardWeights, Fail> {
    if w.is_null() {
        return Err(null("w"));
    }
    Ok(RewardWeights::new(std::slice::from_raw_parts(w, len).to_vec())?)
}

unsafe fn write_out(out: *mut f64, out_len: usize, values: &[f64]) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    if out_len < values.len() {
        return Err(Fail(ClpStatus::BufferTooSmall, format!("need {} entries, got {out_len}", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn clp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// The built-in three-action counterexample.
///
/// # Safety
/// `out` must be a valid pointer; the handle is released with [`clp_env_free`].
#[no_mangle]
pub unsafe extern "C" fn clp_env_counterexample(out: *mut *mut ClpEnv) -> ClpStatus {
    guard(|| put(out, Box::into_raw(Box::new(ClpEnv(BanditEnv::counterexample()))), "out"))
}

/// Random environment with uniform rewards in `[0, 1]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clp_env_random(
    contexts: usize,
    actions: usize,
    m: usize,
    seed: u64,
    out: *mut *mut ClpEnv,
) -> ClpStatus {
    guard(|| {
        let env = BanditEnv::random(contexts, actions, m, seed)?;
        put(out, Box::into_raw(Box::new(ClpEnv(env))), "out")
    })
}

/// Loads an environment from its text format.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clp_env_load(path: *const c_char, out: *mut *mut ClpEnv) -> ClpStatus {
    guard(|| {
        let env = BanditEnv::load(path_arg(path)?)?;
        put(out, Box::into_raw(Box::new(ClpEnv(env))), "out")
    })
}

/// # Safety
/// `env` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn clp_env_save(env: *const ClpEnv, path: *const c_char) -> ClpStatus {
    guard(|| Ok(deref(env, "env")?.0.save(path_arg(path)?)?))
}

/// # Safety
/// `env` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clp_env_free(env: *mut ClpEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn clp_env_dims(
    env: *const ClpEnv,
    contexts: *mut usize,
    actions: *mut usize,
    m: *mut usize,
) -> ClpStatus {
    guard(|| {
        let e = &deref(env, "env")?.0;
        put(contexts, e.num_contexts(), "contexts")?;
        put(actions, e.num_actions(), "actions")?;
        put(m, e.m(), "m")
    })
}

/// Mixing coefficient for KL weight `alpha`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clp_f_mix(alpha: f64, alpha_min: f64, out: *mut f64) -> ClpStatus {
    guard(|| put(out, f_mix(KLWeight::new(alpha, alpha_min)?), "out"))
}

/// KL weight whose mixing coefficient is `u`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clp_inv_f_mix(u: f64, alpha_min: f64, out: *mut f64) -> ClpStatus {
    guard(|| put(out, inv_f_mix(u, alpha_min)?.alpha(), "out"))
}

/// Closed-form optimal policy for `w^T R` at KL weight `alpha`, written
/// row-major as `contexts x actions` probabilities.
///
/// # Safety
/// `env` must be a live handle, `w` must point to `w_len` doubles and `out`
/// to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn clp_optimal_policy(
    env: *const ClpEnv,
    alpha: f64,
    w: *const f64,
    w_len: usize,
    out: *mut f64,
    out_len: usize,
) -> ClpStatus {
    guard(|| {
        let e = &deref(env, "env")?.0;
        let opt = oracle::optimal_for_weights(e, alpha, &weights_arg(w, w_len)?)?;
        write_out(out, out_len, opt.policy.probs().as_slice())
    })
}

/// Loads a bundle checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clp_bundle_load(path: *const c_char, out: *mut *mut ClpBundle) -> ClpStatus {
    guard(|| {
        let p = path_arg(path)?;
        let text = std::fs::read_to_string(p).map_err(Error::from)?;
        let bundle = ParameterBundle::from_text(&text)?;
        put(out, Box::into_raw(Box::new(ClpBundle(bundle))), "out")
    })
}

/// # Safety
/// `bundle` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clp_bundle_free(bundle: *mut ClpBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Number of rewards the bundle is conditioned on.
///
/// # Safety
/// `bundle` must be a live handle and `m` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clp_bundle_m(bundle: *const ClpBundle, m: *mut usize) -> ClpStatus {
    guard(|| put(m, deref(bundle, "bundle")?.0.m(), "m"))
}

/// Conditioned policy `pi(. | x; alpha, w)` on `env`, row-major `contexts x actions`.
///
/// # Safety
/// Handles must be live, `w` must point to `w_len` doubles and `out` to
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn clp_bundle_policy(
    bundle: *const ClpBundle,
    env: *const ClpEnv,
    alpha: f64,
    alpha_min: f64,
    w: *const f64,
    w_len: usize,
    out: *mut f64,
    out_len: usize,
) -> ClpStatus {
    guard(|| {
        let b = &deref(bundle, "bundle")?.0;
        let e = &deref(env, "env")?.0;
        let mixed = b.condition(KLWeight::new(alpha, alpha_min)?, &weights_arg(w, w_len)?)?;
        write_out(out, out_len, mixed.policy(e)?.probs().as_slice())
    })
}

/// Sub-optimality bound for logit-mixing two experts; `+inf` when either
/// concentrability coefficient is infinite.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clp_mixing_bound(
    eps: f64,
    lambda: f64,
    c_12: f64,
    c_21: f64,
    p_min: f64,
    eta: f64,
    num_actions: usize,
    out: *mut f64,
) -> ClpStatus {
    guard(|| {
        let b = BoundInputs { eps, lambda, c_12, c_21, p_min, eta };
        put(out, mixing_bound(&b, num_actions)?, "out")
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn clp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
