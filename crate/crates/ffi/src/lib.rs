//! C ABI over the eisnn core: opaque handles, integer status codes, and a
//! thread-local last-error message. Every entry point catches panics.
//!
//! Ownership rules: `*_new`/`*_encode`/`*_from_events` return handles the
//! caller must release with the matching `*_free`; strings returned by
//! `eisnn_train_json` are released with `eisnn_string_free`.

use eisnn::encode::{bin_events, latency_encode, EncodingConfig, ImageSample, SpikeEventSet};
use eisnn::error::Error;
use eisnn::exp::{self, ExperimentConfig, TrialKey};
use eisnn::matrix::Matrix;
use eisnn::metrics::{van_rossum_distance, SpikeTimeList};
use eisnn::net::{classify, simulate, NetworkSpec, NeuronParams, SpikeRaster};
use eisnn::train::{init_weights, read_checkpoint, write_checkpoint, WeightMatrix};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EisnnStatus {
    Ok = 0,
    ParameterError = 1,
    ShapeError = 2,
    NumericError = 3,
    DataError = 4,
    FormatError = 5,
    StateError = 6,
    ConfigError = 7,
    IoError = 8,
    NullPointer = 100,
    InvalidUtf8 = 101,
    Panic = 102,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> EisnnStatus {
    match err {
        Error::Parameter(_) => EisnnStatus::ParameterError,
        Error::Shape(_) => EisnnStatus::ShapeError,
        Error::Numeric(_) => EisnnStatus::NumericError,
        Error::Data(_) => EisnnStatus::DataError,
        Error::Format { .. } => EisnnStatus::FormatError,
        Error::State(_) => EisnnStatus::StateError,
        Error::Config(_) => EisnnStatus::ConfigError,
        Error::Io { .. } => EisnnStatus::IoError,
    }
}

fn guard(f: impl FnOnce() -> EisnnStatus) -> EisnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&msg);
            EisnnStatus::Panic
        }
    }
}

fn fail(err: Error) -> EisnnStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

macro_rules! nonnull {
    ($ptr:expr) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => {
                set_error(concat!("null pointer: ", stringify!($ptr)));
                return EisnnStatus::NullPointer;
            }
        }
    };
}

/// A network: spec plus its current weight matrices.
pub struct EisnnNetwork {
    spec: NetworkSpec,
    w_in: WeightMatrix,
    w_out: WeightMatrix,
}

/// One encoded input case.
pub struct EisnnRaster {
    raster: SpikeRaster,
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eisnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the thread-local last error message into `buf` (truncated to
/// `len` bytes including the terminator). Returns the full length.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes, or be null.
#[no_mangle]
pub unsafe extern "C" fn eisnn_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                // always terminate
                *buf.add(n - 1) = 0;
            }
        }
        bytes.len()
    })
}

/// Create a network with default LIF parameters and seeded, sign-masked
/// weights (first `n_excitatory` hidden units excitatory).
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn eisnn_network_new(
    n_input: usize,
    n_hidden: usize,
    n_output: usize,
    n_excitatory: usize,
    horizon_steps: usize,
    sigma_init: f64,
    sigma_out: f64,
    seed: u64,
    out: *mut *mut EisnnNetwork,
) -> EisnnStatus {
    guard(|| {
        if out.is_null() {
            set_error("null pointer: out");
            return EisnnStatus::NullPointer;
        }
        let spec = match NetworkSpec::new(
            n_input,
            n_hidden,
            n_output,
            n_excitatory,
            horizon_steps,
            NeuronParams::default(),
        ) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let (w_in, w_out) = match init_weights(&spec, sigma_init, sigma_out, seed) {
            Ok(w) => w,
            Err(e) => return fail(e),
        };
        let net = Box::new(EisnnNetwork { spec, w_in, w_out });
        unsafe { *out = Box::into_raw(net) };
        EisnnStatus::Ok
    })
}

/// Release a network handle. Null is a no-op.
///
/// # Safety
/// `net` must be a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eisnn_network_free(net: *mut EisnnNetwork) {
    if !net.is_null() {
        drop(unsafe { Box::from_raw(net) });
    }
}

/// Save both weight matrices as checkpoint files.
///
/// # Safety
/// `net` must be a live handle; paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn eisnn_network_save(
    net: *const EisnnNetwork,
    w_in_path: *const c_char,
    w_out_path: *const c_char,
) -> EisnnStatus {
    guard(|| {
        let net = nonnull!(net);
        let (p_in, p_out) = match (unsafe { cstr(w_in_path) }, unsafe { cstr(w_out_path) }) {
            (Some(a), Some(b)) => (a, b),
            _ => return EisnnStatus::InvalidUtf8,
        };
        if let Err(e) = write_checkpoint(Path::new(&p_in), 0, &net.w_in) {
            return fail(e);
        }
        if let Err(e) = write_checkpoint(Path::new(&p_out), 1, &net.w_out) {
            return fail(e);
        }
        EisnnStatus::Ok
    })
}

/// Replace a network's weights from checkpoint files.
///
/// # Safety
/// `net` must be a live handle; paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn eisnn_network_load(
    net: *mut EisnnNetwork,
    w_in_path: *const c_char,
    w_out_path: *const c_char,
) -> EisnnStatus {
    guard(|| {
        let net = match unsafe { net.as_mut() } {
            Some(n) => n,
            None => {
                set_error("null pointer: net");
                return EisnnStatus::NullPointer;
            }
        };
        let (p_in, p_out) = match (unsafe { cstr(w_in_path) }, unsafe { cstr(w_out_path) }) {
            (Some(a), Some(b)) => (a, b),
            _ => return EisnnStatus::InvalidUtf8,
        };
        let w_in = match read_checkpoint(Path::new(&p_in)) {
            Ok((_, w)) => w,
            Err(e) => return fail(e),
        };
        let w_out = match read_checkpoint(Path::new(&p_out)) {
            Ok((_, w)) => w,
            Err(e) => return fail(e),
        };
        if w_in.values.rows() != net.spec.n_input
            || w_in.values.cols() != net.spec.n_hidden
            || w_out.values.rows() != net.spec.n_hidden
            || w_out.values.cols() != net.spec.n_output
        {
            return fail(Error::Shape("checkpoint shapes do not fit the network".into()));
        }
        net.w_in = w_in;
        net.w_out = w_out;
        EisnnStatus::Ok
    })
}

unsafe fn cstr(ptr: *const c_char) -> Option<String> {
    if ptr.is_null() {
        set_error("null string pointer");
        return None;
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Some(s.to_string()),
        Err(_) => {
            set_error("string is not valid UTF-8");
            None
        }
    }
}

/// Latency-encode normalized pixel intensities into a spike raster.
///
/// # Safety
/// `pixels` must point to `n_pixels` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn eisnn_raster_latency_encode(
    pixels: *const f64,
    n_pixels: usize,
    horizon_steps: usize,
    dt_ms: f64,
    out: *mut *mut EisnnRaster,
) -> EisnnStatus {
    guard(|| {
        if pixels.is_null() || out.is_null() {
            set_error("null pointer argument");
            return EisnnStatus::NullPointer;
        }
        let pixels = unsafe { std::slice::from_raw_parts(pixels, n_pixels) }.to_vec();
        let sample = ImageSample { pixels, label: 0 };
        let cfg = EncodingConfig::new(horizon_steps, dt_ms);
        match latency_encode(&sample, &cfg) {
            Ok(raster) => {
                unsafe { *out = Box::into_raw(Box::new(EisnnRaster { raster })) };
                EisnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Bin (unit, time-in-seconds) events onto the simulation grid.
///
/// # Safety
/// `units` and `times_s` must point to `n_events` elements each; `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn eisnn_raster_from_events(
    units: *const u32,
    times_s: *const f64,
    n_events: usize,
    n_units: u32,
    duration_s: f64,
    horizon_steps: usize,
    dt_ms: f64,
    out: *mut *mut EisnnRaster,
) -> EisnnStatus {
    guard(|| {
        if units.is_null() || times_s.is_null() || out.is_null() {
            set_error("null pointer argument");
            return EisnnStatus::NullPointer;
        }
        let units = unsafe { std::slice::from_raw_parts(units, n_events) };
        let times = unsafe { std::slice::from_raw_parts(times_s, n_events) };
        let mut events: Vec<(u32, f64)> = units.iter().cloned().zip(times.iter().cloned()).collect();
        events.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        let set = match SpikeEventSet::new(events, 0, n_units, duration_s) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        match bin_events(&set, horizon_steps, dt_ms) {
            Ok(raster) => {
                unsafe { *out = Box::into_raw(Box::new(EisnnRaster { raster })) };
                EisnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a raster handle. Null is a no-op.
///
/// # Safety
/// `raster` must be a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eisnn_raster_free(raster: *mut EisnnRaster) {
    if !raster.is_null() {
        drop(unsafe { Box::from_raw(raster) });
    }
}

/// Total spikes in a raster.
///
/// # Safety
/// `raster` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn eisnn_raster_total_spikes(
    raster: *const EisnnRaster,
    out: *mut usize,
) -> EisnnStatus {
    guard(|| {
        let raster = nonnull!(raster);
        if out.is_null() {
            set_error("null pointer: out");
            return EisnnStatus::NullPointer;
        }
        unsafe { *out = raster.raster.total_spikes() };
        EisnnStatus::Ok
    })
}

/// Simulate one case and return the network's class decision.
///
/// # Safety
/// All pointers must be valid; the raster must fit the network's input
/// size and horizon.
#[no_mangle]
pub unsafe extern "C" fn eisnn_classify(
    net: *const EisnnNetwork,
    raster: *const EisnnRaster,
    out_class: *mut usize,
) -> EisnnStatus {
    guard(|| {
        let net = nonnull!(net);
        let raster = nonnull!(raster);
        if out_class.is_null() {
            set_error("null pointer: out_class");
            return EisnnStatus::NullPointer;
        }
        let trace = match simulate(&net.spec, &net.w_in.values, &net.w_out.values, &raster.raster)
        {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        match classify(&trace) {
            Ok(c) => {
                unsafe { *out_class = c };
                EisnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Simulate one case and return the hidden layer's total spike count.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn eisnn_hidden_spikes(
    net: *const EisnnNetwork,
    raster: *const EisnnRaster,
    out_spikes: *mut usize,
) -> EisnnStatus {
    guard(|| {
        let net = nonnull!(net);
        let raster = nonnull!(raster);
        if out_spikes.is_null() {
            set_error("null pointer: out_spikes");
            return EisnnStatus::NullPointer;
        }
        match simulate(&net.spec, &net.w_in.values, &net.w_out.values, &raster.raster) {
            Ok(t) => {
                unsafe { *out_spikes = t.hidden_spikes.total_spikes() };
                EisnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Van Rossum distance between two sorted spike-time arrays (ms).
///
/// # Safety
/// `a` and `b` must point to `a_len`/`b_len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn eisnn_van_rossum(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    tau_ms: f64,
    out: *mut f64,
) -> EisnnStatus {
    guard(|| {
        if (a.is_null() && a_len > 0) || (b.is_null() && b_len > 0) || out.is_null() {
            set_error("null pointer argument");
            return EisnnStatus::NullPointer;
        }
        let ta = if a_len == 0 {
            Vec::new()
        } else {
            unsafe { std::slice::from_raw_parts(a, a_len) }.to_vec()
        };
        let tb = if b_len == 0 {
            Vec::new()
        } else {
            unsafe { std::slice::from_raw_parts(b, b_len) }.to_vec()
        };
        let (la, lb) = match (SpikeTimeList::new(ta), SpikeTimeList::new(tb)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(e), _) | (_, Err(e)) => return fail(e),
        };
        match van_rossum_distance(&la, &lb, tau_ms) {
            Ok(d) => {
                unsafe { *out = d };
                EisnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Run one fully seeded trial from an experiment-config JSON document and
/// return the run manifest as a newly allocated JSON string (release with
/// `eisnn_string_free`). Dataset files are resolved exactly as the CLI
/// does (config `data_dir` or SNN_DATA_DIR).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_manifest_json`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn eisnn_train_json(
    config_json: *const c_char,
    out_manifest_json: *mut *mut c_char,
) -> EisnnStatus {
    guard(|| {
        if out_manifest_json.is_null() {
            set_error("null pointer: out_manifest_json");
            return EisnnStatus::NullPointer;
        }
        let text = match unsafe { cstr(config_json) } {
            Some(t) => t,
            None => return EisnnStatus::InvalidUtf8,
        };
        let cfg: ExperimentConfig = match serde_json::from_str(&text) {
            Ok(c) => c,
            Err(e) => return fail(Error::Config(e.to_string())),
        };
        if let Err(e) = cfg.validate() {
            return fail(e);
        }
        let run = || -> Result<String, Error> {
            let dir = cfg.resolved_data_dir()?;
            let (mut train, mut test) = exp::load_dataset(cfg.dataset, &dir)?;
            if let Some(n) = cfg.train_subset {
                train = train.seeded_subset(n, eisnn::rng::derive(cfg.base_seed, eisnn::rng::stream::SUBSAMPLE))?;
            }
            if let Some(n) = cfg.eval_subset {
                test = test.seeded_subset(n, eisnn::rng::derive(cfg.base_seed, eisnn::rng::stream::EVAL))?;
            }
            let spec = cfg.network_spec()?;
            let key = TrialKey {
                trial_index: 0,
                sigma_init: cfg.sigma_init_list[0],
                sigma_noise_ratio: cfg.sigma_noise_ratio_list[0],
                repeat: 0,
            };
            let (manifest, _) = exp::run_trial(&cfg, &spec, &train, &test, key)?;
            Ok(manifest.to_json())
        };
        match run() {
            Ok(json) => {
                let cs = CString::new(json.replace('\0', " ")).unwrap_or_default();
                unsafe { *out_manifest_json = cs.into_raw() };
                EisnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must have been returned by `eisnn_train_json`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eisnn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

// keep Matrix referenced so the handle stays FFI-opaque without cbindgen
// trying to expand it
#[allow(dead_code)]
fn _opaque_guard(_: &Matrix) {}
