//! C ABI over bwe-lab: load a trained policy and query it call by call, plus
//! the mixture and action-map helpers an embedding runtime needs.
//!
//! Every fallible function returns a [`BweStatus`]; on failure the message is
//! available from [`bwe_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bwe_lab::learner::{ActorPolicy, Checkpoint};
use bwe_lab::mixture::{gaussian_w2_sq, gm_log_density, mw2_upper, GaussianMixture};
use bwe_lab::session::{normalize_observation, ActionMap, Normalization, Observation, OBS_DIM};
use bwe_lab::sim::RatePolicy;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BweStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadCheckpoint = 4,
    Panic = 5,
}

/// Bitrate range of the log-linear action map.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BweActionMap {
    pub b_min: f64,
    pub b_max: f64,
}

/// Opaque policy handle.
pub struct BwePolicy {
    inner: ActorPolicy,
    norm: Normalization,
    map: ActionMap,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: BweStatus, msg: impl Into<String>) -> BweStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> BweStatus) -> BweStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(BweStatus::Panic, "internal panic"),
    }
}

fn to_map(m: BweActionMap) -> Result<ActionMap, BweStatus> {
    if m.b_min > 0.0 && m.b_min < m.b_max && m.b_max.is_finite() {
        Ok(ActionMap { b_min: m.b_min, b_max: m.b_max })
    } else {
        Err(fail(BweStatus::InvalidArgument, format!("bad bitrate range [{}, {}]", m.b_min, m.b_max)))
    }
}

/// # Safety
/// Each non-null pointer must reference `n` readable doubles.
unsafe fn mixture(w: *const f64, m: *const f64, s: *const f64, n: usize) -> Result<GaussianMixture, BweStatus> {
    if w.is_null() || m.is_null() || s.is_null() {
        return Err(fail(BweStatus::NullPointer, "null mixture array"));
    }
    if n == 0 {
        return Err(fail(BweStatus::InvalidArgument, "mixture needs at least one component"));
    }
    let (w, m, s) = (
        std::slice::from_raw_parts(w, n),
        std::slice::from_raw_parts(m, n),
        std::slice::from_raw_parts(s, n),
    );
    GaussianMixture::new(w.to_vec(), m.to_vec(), s.to_vec())
        .map_err(|e| fail(BweStatus::InvalidArgument, e.to_string()))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bwe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Number of values in one observation.
#[no_mangle]
pub extern "C" fn bwe_obs_dim() -> usize {
    OBS_DIM
}

/// Loads a checkpoint file. On success `*out` owns a handle to release with
/// [`bwe_policy_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn bwe_policy_load(path: *const c_char, stochastic: bool, out: *mut *mut BwePolicy) -> BweStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(BweStatus::NullPointer, "null path or output pointer");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(BweStatus::InvalidArgument, "path is not valid UTF-8");
        };
        let bytes = match std::fs::read(Path::new(path)) {
            Ok(b) => b,
            Err(e) => return fail(BweStatus::Io, format!("{path}: {e}")),
        };
        let ck = match Checkpoint::from_bytes(&bytes) {
            Ok(c) => c,
            Err(e) => return fail(BweStatus::BadCheckpoint, format!("{path}: {e}")),
        };
        let handle = BwePolicy {
            inner: ActorPolicy::from_checkpoint(&ck, stochastic),
            norm: ck.meta.call.normalization,
            map: ck.meta.call.action_map,
        };
        *out = Box::into_raw(Box::new(handle));
        BweStatus::Ok
    })
}

/// Starts a new call: clears history and reseeds sampling.
///
/// # Safety
/// `policy` must come from [`bwe_policy_load`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn bwe_policy_reset(policy: *mut BwePolicy, call_seed: u64) -> BweStatus {
    guard(|| {
        let Some(p) = policy.as_mut() else {
            return fail(BweStatus::NullPointer, "null policy");
        };
        p.inner.reset(call_seed);
        BweStatus::Ok
    })
}

/// Feeds one raw observation and writes the bandwidth estimate in bits/s.
///
/// # Safety
/// `policy` must be live, `raw_obs` must hold `len` doubles and `out_bps`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwe_policy_act(
    policy: *mut BwePolicy,
    raw_obs: *const f64,
    len: usize,
    out_bps: *mut f64,
) -> BweStatus {
    guard(|| {
        let Some(p) = policy.as_mut() else {
            return fail(BweStatus::NullPointer, "null policy");
        };
        if raw_obs.is_null() || out_bps.is_null() {
            return fail(BweStatus::NullPointer, "null observation or output pointer");
        }
        let values = std::slice::from_raw_parts(raw_obs, len).to_vec();
        let raw = match Observation::from_raw(values) {
            Ok(o) => o,
            Err(e) => return fail(BweStatus::InvalidArgument, e.to_string()),
        };
        let normalized = normalize_observation(&raw, &p.norm).expect("raw input");
        *out_bps = p.inner.decide(&raw, &normalized);
        BweStatus::Ok
    })
}

/// Bitrate range the policy was trained with.
///
/// # Safety
/// `policy` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bwe_policy_action_map(policy: *const BwePolicy, out: *mut BweActionMap) -> BweStatus {
    guard(|| match (policy.as_ref(), out.is_null()) {
        (Some(p), false) => {
            *out = BweActionMap { b_min: p.map.b_min, b_max: p.map.b_max };
            BweStatus::Ok
        }
        _ => fail(BweStatus::NullPointer, "null policy or output pointer"),
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `policy` must come from [`bwe_policy_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bwe_policy_free(policy: *mut BwePolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Default bitrate range.
#[no_mangle]
pub extern "C" fn bwe_action_map_default() -> BweActionMap {
    let m = ActionMap::default();
    BweActionMap { b_min: m.b_min, b_max: m.b_max }
}

/// Normalized action in [-1, 1] to bits/s.
///
/// # Safety
/// `out_bps` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwe_action_to_bps(map: BweActionMap, action: f64, out_bps: *mut f64) -> BweStatus {
    guard(|| {
        if out_bps.is_null() {
            return fail(BweStatus::NullPointer, "null output pointer");
        }
        match to_map(map) {
            Ok(m) => {
                *out_bps = m.action_to_bps(action);
                BweStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Bits/s to normalized action, clamping to the range.
///
/// # Safety
/// `out_action` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwe_bps_to_action(map: BweActionMap, bps: f64, out_action: *mut f64) -> BweStatus {
    guard(|| {
        if out_action.is_null() {
            return fail(BweStatus::NullPointer, "null output pointer");
        }
        match to_map(map) {
            Ok(m) => {
                *out_action = m.bps_to_action(bps);
                BweStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Normalizes a raw observation for the given bitrate range.
///
/// # Safety
/// `raw` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bwe_normalize_observation(
    map: BweActionMap,
    raw: *const f64,
    out: *mut f64,
    len: usize,
) -> BweStatus {
    guard(|| {
        if raw.is_null() || out.is_null() {
            return fail(BweStatus::NullPointer, "null observation pointer");
        }
        let m = match to_map(map) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let obs = match Observation::from_raw(std::slice::from_raw_parts(raw, len).to_vec()) {
            Ok(o) => o,
            Err(e) => return fail(BweStatus::InvalidArgument, e.to_string()),
        };
        let norm = normalize_observation(&obs, &Normalization::for_action_map(&m)).expect("raw input");
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(norm.values());
        BweStatus::Ok
    })
}

/// Squared 2-Wasserstein distance between two Gaussians.
#[no_mangle]
pub extern "C" fn bwe_gaussian_w2_sq(mu_a: f64, sigma_a: f64, mu_b: f64, sigma_b: f64) -> f64 {
    gaussian_w2_sq(mu_a, sigma_a, mu_b, sigma_b)
}

/// Independent-coupling upper bound on the squared mixture distance.
///
/// # Safety
/// Mixture arrays must hold `na` (resp. `nb`) doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwe_mw2_upper(
    wa: *const f64,
    ma: *const f64,
    sa: *const f64,
    na: usize,
    wb: *const f64,
    mb: *const f64,
    sb: *const f64,
    nb: usize,
    out: *mut f64,
) -> BweStatus {
    guard(|| {
        if out.is_null() {
            return fail(BweStatus::NullPointer, "null output pointer");
        }
        match (mixture(wa, ma, sa, na), mixture(wb, mb, sb, nb)) {
            (Ok(a), Ok(b)) => {
                *out = mw2_upper(&a, &b);
                BweStatus::Ok
            }
            (Err(s), _) | (_, Err(s)) => s,
        }
    })
}

/// Log density of a mixture at `x`.
///
/// # Safety
/// Mixture arrays must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwe_gm_log_density(
    w: *const f64,
    m: *const f64,
    s: *const f64,
    n: usize,
    x: f64,
    out: *mut f64,
) -> BweStatus {
    guard(|| {
        if out.is_null() {
            return fail(BweStatus::NullPointer, "null output pointer");
        }
        match mixture(w, m, s, n) {
            Ok(z) => {
                *out = gm_log_density(&z, x);
                BweStatus::Ok
            }
            Err(s) => s,
        }
    })
}
