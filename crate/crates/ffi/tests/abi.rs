//! The C entry points called from Rust.

use std::ffi::{CStr, CString};
use std::ptr;

use adalfl::lossnet::{LossNetMode, LossNetwork};
use adalfl_ffi::*;

fn last_error() -> String {
    let p = adalfl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_net(seed: u64, width: usize, mode: AdalflLossMode) -> *mut AdalflLossNet {
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { adalfl_loss_net_new(seed, width, mode, &mut net) },
        AdalflStatus::Ok
    );
    assert!(!net.is_null());
    net
}

#[test]
fn activations_match_the_library() {
    let cfg = adalfl::activations::ActivationConfig::smooth_leaky_relu(0.01, 10.0);
    for x in [-3.0, -0.1, 0.0, 0.4, 25.0] {
        assert_eq!(
            adalfl_smooth_leaky_relu(x, 0.01, 10.0),
            adalfl::activations::smooth_leaky_relu(x, &cfg)
        );
        assert_eq!(
            adalfl_smooth_leaky_relu_deriv(x, 0.01, 10.0),
            adalfl::activations::smooth_leaky_relu_deriv(x, &cfg)
        );
        assert_eq!(adalfl_softplus(x, 2.0), adalfl::activations::softplus(x, 2.0));
    }
    assert!(adalfl_smooth_leaky_relu(0.0, 1.5, 10.0).is_nan());
    assert!(adalfl_smooth_leaky_relu_deriv(0.0, 0.01, 0.0).is_nan());
    assert!(adalfl_softplus(0.0, -1.0).is_nan());
}

#[test]
fn loss_net_eval_matches_the_library() {
    let net = new_net(3, 6, AdalflLossMode::Adalfl);
    let reference = LossNetwork::init(3, 6, LossNetMode::Adalfl).unwrap();
    let mut count = 0usize;
    assert_eq!(
        unsafe { adalfl_loss_net_param_count(net, &mut count) },
        AdalflStatus::Ok
    );
    assert_eq!(count, reference.param_count());

    let y = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
    let p = [0.2, 0.5, 0.3, 0.6, 0.1, 0.3];
    let (mut loss, mut grad) = (0.0, [0.0; 6]);
    let st = unsafe { adalfl_loss_net_eval(net, y.as_ptr(), p.as_ptr(), 2, 3, &mut loss, grad.as_mut_ptr()) };
    assert_eq!(st, AdalflStatus::Ok);

    let mut tape = adalfl::autodiff::Tape::new();
    let yv = tape.leaf(adalfl::Tensor::matrix(2, 3, y.to_vec()).unwrap());
    let pv = tape.leaf(adalfl::Tensor::matrix(2, 3, p.to_vec()).unwrap());
    let (l, _) = reference.loss_forward(&mut tape, yv, pv).unwrap();
    let g = tape.grad(l, &[pv]).unwrap();
    assert_eq!(loss, tape.value(l).item());
    assert_eq!(&grad[..], g[0].data());

    let grid = [0.0, 0.25, 0.5, 1.0];
    let mut surface = [0.0; 4];
    let st = unsafe { adalfl_loss_net_surface(net, 1.0, grid.as_ptr(), grid.len(), surface.as_mut_ptr()) };
    assert_eq!(st, AdalflStatus::Ok);
    let expect: Vec<f64> = reference
        .export_loss_surface(1.0, &grid)
        .unwrap()
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    assert_eq!(&surface[..], expect.as_slice());
    unsafe { adalfl_loss_net_free(net) };
}

#[test]
fn json_and_file_round_trip() {
    let net = new_net(9, 5, AdalflLossMode::Ml3Ablation);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { adalfl_loss_net_to_json(net, &mut json) }, AdalflStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    assert_eq!(
        LossNetwork::from_json(&text).unwrap(),
        LossNetwork::init(9, 5, LossNetMode::Ml3Ablation).unwrap()
    );

    let mut back = ptr::null_mut();
    assert_eq!(unsafe { adalfl_loss_net_from_json(json, &mut back) }, AdalflStatus::Ok);
    unsafe { adalfl_string_free(json) };

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss_net.json");
    std::fs::write(&path, &text).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { adalfl_loss_net_load(cpath.as_ptr(), &mut loaded) },
        AdalflStatus::Ok
    );
    unsafe {
        adalfl_loss_net_free(back);
        adalfl_loss_net_free(loaded);
        adalfl_loss_net_free(net);
        adalfl_loss_net_free(ptr::null_mut());
        adalfl_string_free(ptr::null_mut());
    }
}

#[test]
fn failures_set_status_and_message() {
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { adalfl_loss_net_new(0, 0, AdalflLossMode::Adalfl, &mut net) },
        AdalflStatus::Config
    );
    assert!(net.is_null());
    assert!(last_error().contains("width"));

    assert_eq!(
        unsafe { adalfl_loss_net_new(0, 4, AdalflLossMode::Adalfl, ptr::null_mut()) },
        AdalflStatus::NullPointer
    );
    let bad = CString::new("{\"mode\": 3}").unwrap();
    assert_eq!(
        unsafe { adalfl_loss_net_from_json(bad.as_ptr(), &mut net) },
        AdalflStatus::Parse
    );
    let missing = CString::new("/nonexistent/loss_net.json").unwrap();
    assert_eq!(
        unsafe { adalfl_loss_net_load(missing.as_ptr(), &mut net) },
        AdalflStatus::Io
    );
    assert!(last_error().contains("/nonexistent/loss_net.json"));

    let mut count = 0;
    assert_eq!(
        unsafe { adalfl_loss_net_param_count(ptr::null(), &mut count) },
        AdalflStatus::NullPointer
    );

    let h = new_net(1, 4, AdalflLossMode::Adalfl);
    let mut loss = 0.0;
    let y = [0.0, 1.0];
    let st = unsafe { adalfl_loss_net_eval(h, y.as_ptr(), ptr::null(), 1, 2, &mut loss, ptr::null_mut()) };
    assert_eq!(st, AdalflStatus::NullPointer);
    let nan = [f64::NAN, 0.5];
    let st = unsafe { adalfl_loss_net_eval(h, y.as_ptr(), nan.as_ptr(), 1, 2, &mut loss, ptr::null_mut()) };
    assert_eq!(st, AdalflStatus::NonFinite);
    unsafe { adalfl_loss_net_free(h) };
}

#[test]
fn gradcheck_through_the_abi() {
    let mut r = AdalflGradCheck::default();
    assert_eq!(unsafe { adalfl_gradcheck(0, 1, &mut r) }, AdalflStatus::Ok);
    assert!(r.cosine > 0.9999 && r.max_rel_err <= 1e-3, "{r:?}");
    assert!(r.n_phi > 0 && r.n_theta > 0);
    assert_eq!(unsafe { adalfl_gradcheck(0, 0, &mut r) }, AdalflStatus::Config);
}

#[test]
fn run_experiment_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        r#"
modes = ["baseline_ce", "offline_fixed"]
seeds = [4]
batch_size = 8
log_interval = 5
snapshot_interval = 5
clock = "logical"

[dataset]
kind = "synthetic_classification"
n_train = 60
n_test = 20
features = 2
classes = 2
separation = 4.0
seed = 1

[arch]
kind = "logistic"
in_dim = 2
n_classes = 2

[loss_net]
width = 4

[meta]
s_init = 3
s_train = 10
"#,
    )
    .unwrap();
    let path = CString::new(cfg.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().join("runs").to_str().unwrap()).unwrap();
    let mut runs = 0usize;
    assert_eq!(
        unsafe { adalfl_run_experiment(path.as_ptr(), out.as_ptr(), &mut runs) },
        AdalflStatus::Ok
    );
    assert_eq!(runs, 2);
    assert!(dir.path().join("runs/offline_fixed/4/snapshots.csv").is_file());
    assert_eq!(
        unsafe { adalfl_run_experiment(ptr::null(), ptr::null(), ptr::null_mut()) },
        AdalflStatus::NullPointer
    );
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(adalfl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
