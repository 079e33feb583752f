//! C ABI for the adalfl library.
//!
//! Fallible functions return an [`AdalflStatus`]. After a failure, the
//! message is available from [`adalfl_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use adalfl::activations::{smooth_leaky_relu, smooth_leaky_relu_deriv, softplus, ActivationConfig};
use adalfl::autodiff::Tape;
use adalfl::harness::run::load_loss_net;
use adalfl::harness::{run_experiment, ExperimentConfig};
use adalfl::lossnet::{LossNetMode, LossNetwork};
use adalfl::metaloop::tiny_meta_gradient_check;
use adalfl::{Error, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdalflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Config = 5,
    Divergence = 6,
    Io = 7,
    Parse = 8,
    Panic = 9,
}

/// Hidden and output activations of a loss network.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdalflLossMode {
    /// Smooth leaky ReLU hidden units, unbounded output.
    Adalfl = 0,
    /// ReLU hidden units, softplus output.
    Ml3Ablation = 1,
}

impl From<AdalflLossMode> for LossNetMode {
    fn from(m: AdalflLossMode) -> Self {
        match m {
            AdalflLossMode::Adalfl => LossNetMode::Adalfl,
            AdalflLossMode::Ml3Ablation => LossNetMode::Ml3Ablation,
        }
    }
}

/// Opaque loss network handle.
pub struct AdalflLossNet {
    net: LossNetwork,
}

/// Outcome of one meta-gradient check against finite differences.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdalflGradCheck {
    pub cosine: f64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub n_phi: usize,
    pub n_theta: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: AdalflStatus,
    message: String,
}

fn failure(status: AdalflStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

fn status_of(e: &Error) -> AdalflStatus {
    match e {
        Error::Shape { .. } | Error::NonScalarOutput(_) | Error::ForeignVar { .. } => AdalflStatus::Shape,
        Error::NonFinite { .. } => AdalflStatus::NonFinite,
        Error::Config(_) | Error::NotOneHot(_) => AdalflStatus::Config,
        Error::Divergence { .. } => AdalflStatus::Divergence,
        Error::Idx { .. } | Error::Io { .. } | Error::Csv(_) | Error::EmptyOutput(_) => AdalflStatus::Io,
        Error::Parse(_) => AdalflStatus::Parse,
        Error::Run { source, .. } => status_of(source),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        failure(status_of(&e), e.to_string())
    }
}

fn set_last_error(message: String) {
    // interior NULs would truncate the message; replace them
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdalflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdalflStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.message);
            e.status
        }
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {detail}"));
            AdalflStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(failure(AdalflStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| failure(AdalflStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(failure(AdalflStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn net_arg<'a>(net: *const AdalflLossNet) -> Result<&'a LossNetwork, Failure> {
    net.as_ref()
        .map(|h| &h.net)
        .ok_or_else(|| failure(AdalflStatus::NullPointer, "loss network handle is null"))
}

fn out_arg<T>(out: *mut T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(failure(AdalflStatus::NullPointer, format!("{what} is null")));
    }
    Ok(())
}

unsafe fn put_net(out: *mut *mut AdalflLossNet, net: LossNetwork) {
    *out = Box::into_raw(Box::new(AdalflLossNet { net }));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adalfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn adalfl_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn adalfl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Smooth leaky ReLU `(softplus_beta(x) * (1 - gamma) + gamma * x)`.
/// Returns NaN for `gamma` outside `[0, 1)` or non-positive `beta`.
#[no_mangle]
pub extern "C" fn adalfl_smooth_leaky_relu(x: f64, gamma: f64, beta: f64) -> f64 {
    let cfg = ActivationConfig::smooth_leaky_relu(gamma, beta);
    cfg.validate().map_or(f64::NAN, |_| smooth_leaky_relu(x, &cfg))
}

/// Derivative of [`adalfl_smooth_leaky_relu`] in `x`; NaN for invalid parameters.
#[no_mangle]
pub extern "C" fn adalfl_smooth_leaky_relu_deriv(x: f64, gamma: f64, beta: f64) -> f64 {
    let cfg = ActivationConfig::smooth_leaky_relu(gamma, beta);
    cfg.validate().map_or(f64::NAN, |_| smooth_leaky_relu_deriv(x, &cfg))
}

/// `ln(1 + e^{beta x}) / beta`; NaN for non-positive `beta`.
#[no_mangle]
pub extern "C" fn adalfl_softplus(x: f64, beta: f64) -> f64 {
    if beta > 0.0 {
        softplus(x, beta)
    } else {
        f64::NAN
    }
}

/// Creates a freshly initialized loss network.
///
/// # Safety
/// `out` must be a valid pointer to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn adalfl_loss_net_new(
    seed: u64,
    width: usize,
    mode: AdalflLossMode,
    out: *mut *mut AdalflLossNet,
) -> AdalflStatus {
    guard(|| {
        out_arg(out, "out")?;
        put_net(out, LossNetwork::init(seed, width, mode.into())?);
        Ok(())
    })
}

/// Parses a loss network from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adalfl_loss_net_from_json(json: *const c_char, out: *mut *mut AdalflLossNet) -> AdalflStatus {
    guard(|| {
        out_arg(out, "out")?;
        let text = str_arg(json, "json")?;
        put_net(out, LossNetwork::from_json(text)?);
        Ok(())
    })
}

/// Reads a loss network JSON file, such as a run's `loss_net.json`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adalfl_loss_net_load(path: *const c_char, out: *mut *mut AdalflLossNet) -> AdalflStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        put_net(out, load_loss_net(&PathBuf::from(path))?);
        Ok(())
    })
}

/// Serializes a loss network to JSON. Free the result with [`adalfl_string_free`].
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adalfl_loss_net_to_json(net: *const AdalflLossNet, out: *mut *mut c_char) -> AdalflStatus {
    guard(|| {
        out_arg(out, "out")?;
        let json = net_arg(net)?.to_json()?;
        let c = CString::new(json).map_err(|_| failure(AdalflStatus::Parse, "JSON contains a NUL byte"))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Releases a loss network handle. NULL is ignored.
///
/// # Safety
/// `net` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn adalfl_loss_net_free(net: *mut AdalflLossNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of scalar parameters in the network.
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adalfl_loss_net_param_count(net: *const AdalflLossNet, out: *mut usize) -> AdalflStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = net_arg(net)?.param_count();
        Ok(())
    })
}

/// Loss of row-major `(batch, channels)` targets and predictions, and
/// optionally its gradient with respect to the predictions.
///
/// # Safety
/// `y` and `pred` must each hold `batch * channels` values; `out_loss` must be
/// writable; `out_grad` is either NULL or has room for `batch * channels` values.
#[no_mangle]
pub unsafe extern "C" fn adalfl_loss_net_eval(
    net: *const AdalflLossNet,
    y: *const f64,
    pred: *const f64,
    batch: usize,
    channels: usize,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> AdalflStatus {
    guard(|| {
        out_arg(out_loss, "out_loss")?;
        let net = net_arg(net)?;
        let n = batch
            .checked_mul(channels)
            .filter(|&n| n > 0)
            .ok_or_else(|| failure(AdalflStatus::InvalidArgument, "batch and channels must be positive"))?;
        let y = Tensor::matrix(batch, channels, slice_arg(y, n, "y")?.to_vec())?;
        let p = Tensor::matrix(batch, channels, slice_arg(pred, n, "pred")?.to_vec())?;
        let mut tape = Tape::new();
        let yv = tape.leaf(y);
        let pv = tape.leaf(p);
        let (loss, _) = net.loss_forward(&mut tape, yv, pv)?;
        *out_loss = tape.value(loss).item();
        if !out_grad.is_null() {
            let g = tape.grad(loss, &[pv])?;
            std::slice::from_raw_parts_mut(out_grad, n).copy_from_slice(g[0].data());
        }
        Ok(())
    })
}

/// Per-pair losses `l(y_fixed, f_i)` for each of the `n` prediction values.
///
/// # Safety
/// `f` must hold `n` values and `out_loss` must have room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn adalfl_loss_net_surface(
    net: *const AdalflLossNet,
    y_fixed: f64,
    f: *const f64,
    n: usize,
    out_loss: *mut f64,
) -> AdalflStatus {
    guard(|| {
        let net = net_arg(net)?;
        let grid = slice_arg(f, n, "f")?;
        if n > 0 {
            out_arg(out_loss, "out_loss")?;
        }
        for (i, (_, l)) in net.export_loss_surface(y_fixed, grid)?.into_iter().enumerate() {
            *out_loss.add(i) = l;
        }
        Ok(())
    })
}

/// Compares the unrolled meta-gradient with central finite differences on a
/// small seeded instance.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adalfl_gradcheck(seed: u64, s_inner: usize, out: *mut AdalflGradCheck) -> AdalflStatus {
    guard(|| {
        out_arg(out, "out")?;
        let r = tiny_meta_gradient_check(seed, s_inner)?;
        *out = AdalflGradCheck {
            cosine: r.cosine,
            max_rel_err: r.max_rel_err,
            max_abs_err: r.max_abs_err,
            n_phi: r.n_phi,
            n_theta: r.n_theta,
        };
        Ok(())
    })
}

/// Runs every (mode, seed) cell of a TOML experiment config and writes the
/// outputs. `out_dir` overrides the config's output directory when not NULL;
/// `out_runs` receives the number of completed runs when not NULL.
///
/// # Safety
/// `config_path` and a non-NULL `out_dir` must be NUL-terminated strings;
/// a non-NULL `out_runs` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adalfl_run_experiment(
    config_path: *const c_char,
    out_dir: *const c_char,
    out_runs: *mut usize,
) -> AdalflStatus {
    guard(|| {
        let mut cfg = ExperimentConfig::load(&PathBuf::from(str_arg(config_path, "config_path")?))?;
        if !out_dir.is_null() {
            cfg.out_dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        }
        let cells = run_experiment(&cfg)?;
        if !out_runs.is_null() {
            *out_runs = cells.len();
        }
        Ok(())
    })
}
