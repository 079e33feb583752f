//! End-to-end runs of the `adalfl` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adalfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adalfl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"
modes = ["baseline_ce", "online_adalfl"]
seeds = [0, 1, 2]
batch_size = 16
log_interval = 10
snapshot_interval = 20
clock = "logical"

[dataset]
kind = "synthetic_classification"
n_train = 150
n_test = 50
features = 2
classes = 2
separation = 4.0
seed = 3

[arch]
kind = "logistic"
in_dim = 2
n_classes = 2

[loss_net]
width = 6

[meta]
s_init = 5
s_train = 30
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gradcheck_passes_and_reports_errors() {
    let o = adalfl(&["gradcheck", "--seeds", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("seed ")).count(), 2);
    assert!(text.contains("max relative error"));
}

#[test]
fn gradcheck_fails_against_an_impossible_tolerance() {
    let o = adalfl(&["gradcheck", "--seeds", "1", "--tol", "0"]);
    assert!(!o.status.success());
}

#[test]
fn train_compare_and_export_surface() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("runs");
    let out_s = out.to_string_lossy().into_owned();
    let o = adalfl(&["train", "--config", &cfg, "--out", &out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut metrics = 0;
    for mode in ["baseline_ce", "online_adalfl"] {
        for seed in 0..3 {
            metrics += out.join(mode).join(seed.to_string()).join("metrics.csv").is_file() as usize;
        }
    }
    assert_eq!(metrics, 6);

    let o = adalfl(&["compare", &out_s]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mode,split,runs,step,error_rate,task_loss");
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], "test");
        assert_eq!(cols[2], "3");
        assert_eq!(cols[3], "30");
        for stat in &cols[4..] {
            let (mean, std) = stat.split_once('±').expect("mean±std");
            assert_eq!(mean.split_once('.').unwrap().1.len(), 4, "{stat}");
            assert_eq!(std.split_once('.').unwrap().1.len(), 4, "{stat}");
        }
    }

    let net = out.join("online_adalfl/0/loss_net.json");
    let surface = dir.path().join("surface.csv");
    let o = adalfl(&[
        "export-surface",
        "--net",
        &net.to_string_lossy(),
        "--out",
        &surface.to_string_lossy(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&surface).unwrap();
    assert_eq!(text.lines().count(), 203);
    assert_eq!(text.lines().next().unwrap(), "run_id,seed,step,y_fixed,f,loss");
}

#[test]
fn bad_inputs_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = adalfl(&["train", "--config", &missing.to_string_lossy()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));

    let cfg = write_config(dir.path(), &CONFIG.replace("seeds = [0, 1, 2]", "seeds = []"));
    let o = adalfl(&["train", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));

    let cfg = write_config(dir.path(), "modes = [");
    assert!(!adalfl(&["train", "--config", &cfg]).status.success());

    let o = adalfl(&["export-surface", "--net", &missing.to_string_lossy(), "--out", "x.csv"]);
    assert!(!o.status.success());
    assert!(!adalfl(&["frobnicate"]).status.success());
}
