//! C ABI for the renscen library.
//!
//! The surface is handle-based: a [`RenscenModel`] wraps a trained
//! model (architecture + parameters), a [`RenscenScenarios`] wraps one
//! sampled scenario set. Handles are opaque pointers created and
//! destroyed by this library; the caller never sees their layout.
//!
//! Conventions, shared by every function here:
//!
//! - Fallible calls return a [`RenscenStatus`]; anything but
//!   `RENSCEN_STATUS_OK` leaves a UTF-8 description retrievable with
//!   [`renscen_last_error`] (thread-local, valid until the next failing
//!   call on the same thread).
//! - Output parameters are written only on `RENSCEN_STATUS_OK`.
//! - Null handles and null output pointers are rejected, never
//!   dereferenced.
//! - Panics cannot unwind across the boundary: every entry point is
//!   wrapped in `catch_unwind` and reports `RENSCEN_STATUS_PANIC`.
//! - Free functions accept null and are idempotent in the usual C
//!   sense (freeing the same non-null handle twice is still UB, as
//!   with `free`).
//!
//! The generated header lives at `include/renscen.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use renscen::config::{CasePreset, ModelConfig};
use renscen::data::csvio::ingest_csv_path;
use renscen::data::window::build_windows;
use renscen::data::{Dataset, SchemaConfig};
use renscen::metrics::crps_ensemble;
use renscen::params::ParamStore;
use renscen::scenario::{sample_scenarios, ScenarioSet};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenscenStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was malformed (bad UTF-8, bad enum value, zero
    /// count, mismatched buffer length).
    InvalidArgument = 2,
    /// A file could not be read or its contents failed validation.
    Data = 3,
    /// The numeric core aborted (non-finite intermediate).
    Numeric = 4,
    /// An index was out of range for the handle it addresses.
    BadIndex = 5,
    /// A panic was caught at the boundary; state may be stale but the
    /// process is intact.
    Panic = 6,
}

/// A trained model: architecture description plus parameter store.
pub struct RenscenModel {
    cfg: ModelConfig,
    store: ParamStore,
}

/// One sampled scenario set with its uncertainty decomposition.
pub struct RenscenScenarios {
    set: ScenarioSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    // interior NULs cannot come from our error strings, but never panic here
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: RenscenStatus, msg: &str) -> RenscenStatus {
    set_error(msg);
    status
}

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic with non-string payload".into()
    }
}

/// Run an entry point's body with panics contained.
fn guarded(f: impl FnOnce() -> RenscenStatus) -> RenscenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => fail(RenscenStatus::Panic, &format!("panic: {}", panic_text(payload))),
    }
}

/// # Safety
/// `ptr` must be a valid NUL-terminated C string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, RenscenStatus> {
    if ptr.is_null() {
        return Err(fail(RenscenStatus::NullArgument, &format!("{name} is null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(RenscenStatus::InvalidArgument, &format!("{name} is not UTF-8")))
}

/// Library version as a static NUL-terminated string; never null,
/// never freed by the caller.
#[no_mangle]
pub extern "C" fn renscen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Description of the most recent failure on this thread, as a
/// NUL-terminated UTF-8 string. Owned by the library: do not free.
/// The pointer is invalidated by the next failing call on this thread.
#[no_mangle]
pub extern "C" fn renscen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a trained model from the two JSON artifacts a training run
/// writes: the architecture description and a parameter manifest.
/// On success `*out` owns the handle; release it with
/// [`renscen_model_free`].
///
/// # Safety
/// `config_path` and `params_path` must be valid NUL-terminated C
/// strings; `out` must be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn renscen_model_load(
    config_path: *const c_char,
    params_path: *const c_char,
    out: *mut *mut RenscenModel,
) -> RenscenStatus {
    guarded(|| {
        if out.is_null() {
            return fail(RenscenStatus::NullArgument, "out is null");
        }
        let config_path = match unsafe { utf8_arg(config_path, "config_path") } {
            Ok(s) => s,
            Err(st) => return st,
        };
        let params_path = match unsafe { utf8_arg(params_path, "params_path") } {
            Ok(s) => s,
            Err(st) => return st,
        };
        let read = |p: &str| {
            fs::read_to_string(Path::new(p))
                .map_err(|e| fail(RenscenStatus::Data, &format!("cannot read {p}: {e}")))
        };
        let cfg: ModelConfig = match read(config_path).and_then(|text| {
            serde_json::from_str(&text)
                .map_err(|e| fail(RenscenStatus::Data, &format!("{config_path}: {e}")))
        }) {
            Ok(c) => c,
            Err(st) => return st,
        };
        if let Err(e) = cfg.validate() {
            return fail(RenscenStatus::Data, &format!("{config_path}: {e}"));
        }
        let store = match read(params_path).and_then(|text| {
            ParamStore::from_json(&text)
                .map_err(|e| fail(RenscenStatus::Data, &format!("{params_path}: {e}")))
        }) {
            Ok(s) => s,
            Err(st) => return st,
        };
        unsafe { out.write(Box::into_raw(Box::new(RenscenModel { cfg, store }))) };
        RenscenStatus::Ok
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`renscen_model_load`] that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn renscen_model_free(model: *mut RenscenModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of sites the model forecasts jointly; 0 if `model` is null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn renscen_model_sites(model: *const RenscenModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.cfg.n_sites)
}

/// Forecast lead in nodes; 0 if `model` is null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn renscen_model_lead(model: *const RenscenModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.cfg.lead())
}

/// Total window length in nodes (known prefix + lead); 0 if `model`
/// is null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn renscen_model_window(model: *const RenscenModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.cfg.n_t)
}

/// When passed as `window_idx`, selects the latest complete window.
pub const RENSCEN_LAST_WINDOW: usize = usize::MAX;

/// Sample one scenario set from a data CSV + schema pair.
///
/// The file is windowed at stride 1; `window_idx` counts windows from
/// the start of the series ([`RENSCEN_LAST_WINDOW`] picks the latest).
/// `case` selects the input-channel preset as an ASCII character:
/// 'A' point + weather forecasts, 'B' power history, 'C' weather only.
/// It must match the preset the model was trained under (the pinned
/// channel lists are verified). `n_f` dropout patterns x `n_n` latent
/// draws scenarios are generated under `seed`.
///
/// On success `*out` owns the handle; release it with
/// [`renscen_scenarios_free`].
///
/// # Safety
/// `model` must be a live model handle; `data_path` and `schema_path`
/// must be valid NUL-terminated C strings; `out` must be a valid
/// pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn renscen_forecast_csv(
    model: *const RenscenModel,
    data_path: *const c_char,
    schema_path: *const c_char,
    case: c_char,
    window_idx: usize,
    n_f: usize,
    n_n: usize,
    seed: u64,
    out: *mut *mut RenscenScenarios,
) -> RenscenStatus {
    guarded(|| {
        if out.is_null() {
            return fail(RenscenStatus::NullArgument, "out is null");
        }
        let Some(model) = (unsafe { model.as_ref() }) else {
            return fail(RenscenStatus::NullArgument, "model is null");
        };
        let data_path = match unsafe { utf8_arg(data_path, "data_path") } {
            Ok(s) => s,
            Err(st) => return st,
        };
        let schema_path = match unsafe { utf8_arg(schema_path, "schema_path") } {
            Ok(s) => s,
            Err(st) => return st,
        };
        let case = match case as u8 {
            b'A' | b'a' => CasePreset::A,
            b'B' | b'b' => CasePreset::B,
            b'C' | b'c' => CasePreset::C,
            other => {
                return fail(
                    RenscenStatus::InvalidArgument,
                    &format!("case must be 'A', 'B', or 'C', got byte {other}"),
                )
            }
        };
        if n_f == 0 || n_n == 0 {
            return fail(RenscenStatus::InvalidArgument, "n_f and n_n must be at least 1");
        }

        let schema_text = match fs::read_to_string(Path::new(schema_path)) {
            Ok(t) => t,
            Err(e) => {
                return fail(RenscenStatus::Data, &format!("cannot read {schema_path}: {e}"))
            }
        };
        let schema = match SchemaConfig::from_json(&schema_text) {
            Ok(s) => s,
            Err(e) => return fail(RenscenStatus::Data, &format!("{schema_path}: {e}")),
        };
        let series = match ingest_csv_path(Path::new(data_path), &schema) {
            Ok(s) => s,
            Err(e) => return fail(RenscenStatus::Data, &e.to_string()),
        };
        let ds = match Dataset::build(series, &schema) {
            Ok(d) => d,
            Err(e) => return fail(RenscenStatus::Data, &e.to_string()),
        };
        let ws = match build_windows(&ds, model.cfg.n_t, model.cfg.n_lag, 1, case) {
            Ok(w) => w,
            Err(e) => return fail(RenscenStatus::Data, &e.to_string()),
        };
        if ws.enc_channels != model.cfg.enc_channels || ws.dec_channels != model.cfg.dec_channels {
            return fail(
                RenscenStatus::Data,
                "data channels do not match the channels the model was trained on",
            );
        }
        let idx =
            if window_idx == RENSCEN_LAST_WINDOW { ws.samples.len() - 1 } else { window_idx };
        let Some(sample) = ws.samples.get(idx) else {
            return fail(
                RenscenStatus::BadIndex,
                &format!("window {idx} out of range ({} windows)", ws.samples.len()),
            );
        };
        match sample_scenarios(&model.cfg, &model.store, sample, n_f, n_n, seed) {
            Ok(set) => {
                unsafe { out.write(Box::into_raw(Box::new(RenscenScenarios { set }))) };
                RenscenStatus::Ok
            }
            Err(e) => fail(RenscenStatus::Numeric, &e.to_string()),
        }
    })
}

/// Release a scenario-set handle. Null is ignored.
///
/// # Safety
/// `set` must be null or a handle from [`renscen_forecast_csv`] that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn renscen_scenarios_free(set: *mut RenscenScenarios) {
    if !set.is_null() {
        drop(unsafe { Box::from_raw(set) });
    }
}

/// Number of scenarios in the set (`n_f x n_n`); 0 if `set` is null.
///
/// # Safety
/// `set` must be null or a live scenario-set handle.
#[no_mangle]
pub unsafe extern "C" fn renscen_scenarios_count(set: *const RenscenScenarios) -> usize {
    unsafe { set.as_ref() }.map_or(0, |s| s.set.scenarios.len())
}

/// Values per scenario track (`lead x sites`, node-major); 0 if `set`
/// is null.
///
/// # Safety
/// `set` must be null or a live scenario-set handle.
#[no_mangle]
pub unsafe extern "C" fn renscen_scenarios_len(set: *const RenscenScenarios) -> usize {
    unsafe { set.as_ref() }.map_or(0, |s| s.set.lead * s.set.n_sites)
}

/// Copy one scenario track into `out`. `out_len` must equal
/// [`renscen_scenarios_len`]. Tracks are ordered by dropout pattern,
/// then latent draw; values are node-major (all sites of node 0, then
/// node 1, ...), normalized to installed capacity.
///
/// # Safety
/// `set` must be a live scenario-set handle; `out` must point to at
/// least `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn renscen_scenarios_track(
    set: *const RenscenScenarios,
    idx: usize,
    out: *mut f64,
    out_len: usize,
) -> RenscenStatus {
    guarded(|| {
        let Some(s) = (unsafe { set.as_ref() }) else {
            return fail(RenscenStatus::NullArgument, "set is null");
        };
        if out.is_null() {
            return fail(RenscenStatus::NullArgument, "out is null");
        }
        let Some(track) = s.set.scenarios.get(idx) else {
            return fail(
                RenscenStatus::BadIndex,
                &format!("scenario {idx} out of range ({} scenarios)", s.set.scenarios.len()),
            );
        };
        if out_len != track.len() {
            return fail(
                RenscenStatus::InvalidArgument,
                &format!("out_len {out_len} != track length {}", track.len()),
            );
        }
        unsafe { std::ptr::copy_nonoverlapping(track.as_ptr(), out, track.len()) };
        RenscenStatus::Ok
    })
}

/// Copy the per-cell mean over all scenarios into `out`. `out_len`
/// must equal [`renscen_scenarios_len`].
///
/// # Safety
/// `set` must be a live scenario-set handle; `out` must point to at
/// least `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn renscen_scenarios_mean(
    set: *const RenscenScenarios,
    out: *mut f64,
    out_len: usize,
) -> RenscenStatus {
    guarded(|| {
        let Some(s) = (unsafe { set.as_ref() }) else {
            return fail(RenscenStatus::NullArgument, "set is null");
        };
        if out.is_null() {
            return fail(RenscenStatus::NullArgument, "out is null");
        }
        if out_len != s.set.mean_track.len() {
            return fail(
                RenscenStatus::InvalidArgument,
                &format!("out_len {out_len} != track length {}", s.set.mean_track.len()),
            );
        }
        unsafe { std::ptr::copy_nonoverlapping(s.set.mean_track.as_ptr(), out, out_len) };
        RenscenStatus::Ok
    })
}

/// Report the set's uncertainty split: `var_model` receives the
/// dropout-resampling (model) variance, `var_noise` the latent-draw
/// (noise) variance, each averaged over the lead window. Either output
/// may be null to skip it.
///
/// # Safety
/// `set` must be a live scenario-set handle; non-null outputs must be
/// valid pointers to writable doubles.
#[no_mangle]
pub unsafe extern "C" fn renscen_scenarios_uncertainty(
    set: *const RenscenScenarios,
    var_model: *mut f64,
    var_noise: *mut f64,
) -> RenscenStatus {
    guarded(|| {
        let Some(s) = (unsafe { set.as_ref() }) else {
            return fail(RenscenStatus::NullArgument, "set is null");
        };
        if !var_model.is_null() {
            unsafe { var_model.write(s.set.var_hat) };
        }
        if !var_noise.is_null() {
            unsafe { var_noise.write(s.set.var_tilde) };
        }
        RenscenStatus::Ok
    })
}

/// Number of output values that hit the clip bounds while sampling;
/// 0 if `set` is null.
///
/// # Safety
/// `set` must be null or a live scenario-set handle.
#[no_mangle]
pub unsafe extern "C" fn renscen_scenarios_clip_events(set: *const RenscenScenarios) -> usize {
    unsafe { set.as_ref() }.map_or(0, |s| s.set.clip_events)
}

/// Closed-form ensemble CRPS of `len` sample values against one
/// observation. Returns NaN (and sets the error string) when `values`
/// is null or `len` is 0.
///
/// # Safety
/// `values` must point to at least `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn renscen_crps(values: *const f64, len: usize, observed: f64) -> f64 {
    if values.is_null() || len == 0 {
        set_error("crps needs a non-empty ensemble");
        return f64::NAN;
    }
    let slice = unsafe { std::slice::from_raw_parts(values, len) };
    match catch_unwind(AssertUnwindSafe(|| crps_ensemble(slice, observed))) {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => {
            set_error(&e);
            f64::NAN
        }
        Err(payload) => {
            set_error(&format!("panic: {}", panic_text(payload)));
            f64::NAN
        }
    }
}
