use std::path::Path;
use std::process::{Command, Output};

use fusescan_core::{SeededRng, Tensor};
use serde_json::Value;

fn fusescan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusescan")).args(args).env("FUSESCAN_WORKERS", "1").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn checks_pass(json: &[u8]) -> bool {
    let v: Value = serde_json::from_slice(json).unwrap();
    let checks = v["checks"].as_object().unwrap();
    !checks.is_empty() && checks.values().all(|c| c.as_bool() == Some(true))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn serialize_order_one_lists_every_cell() {
    let o = fusescan(&["serialize", "--paradigm", "hilbert", "--order", "1"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,x,y,z"));
    let idx: Vec<u64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(idx, (0..8).collect::<Vec<_>>());
}

#[test]
fn selftest_passes() {
    let o = fusescan(&["selftest", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(checks_pass(&o.stdout));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&fusescan(&["selftest", "--no-such-flag"])), 1);
    assert_eq!(code(&fusescan(&["serialize", "--order", "99"])), 1);
    assert_eq!(code(&fusescan(&["scan", "--input", "/nonexistent/x.tensor"])), 1);
    assert_eq!(code(&fusescan(&["--help"])), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_fusescan")).args(["selftest"]).env("FUSESCAN_WORKERS", "zero").output().unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn out_flag_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = fusescan(&["align-eval", "--scenes", "3", "--out", path(&out)]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["command"], "align-eval");
}

#[test]
fn scan_round_trips_through_tensor_files() {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("x.tensor"), dir.path().join("y.tensor"));
    let x = Tensor::new(vec![64, 4], SeededRng::new(5).uniform_vec(256, -1.0, 1.0)).unwrap();
    std::fs::write(&input, x.to_bytes()).unwrap();
    let o = fusescan(&["scan", "--input", path(&input), "--state", "4", "--chunks", "3", "--output", path(&output)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let y = Tensor::<f64>::read_from(std::fs::read(&output).unwrap().as_slice()).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert!(y.data().iter().all(|v| v.is_finite()));
}

#[test]
fn voxelize_and_fuse_checks_pass() {
    let o = fusescan(&["voxelize", "--stages", "2"]);
    assert_eq!(code(&o), 0);
    assert!(checks_pass(&o.stdout));
    let o = fusescan(&["fuse", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(checks_pass(&o.stdout));
}

#[test]
fn erf_heatmaps_are_deterministic() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = fusescan(&["erf", "--seed", "2", "--queries", "2", "--max-tokens", "128", "--heatmap-dir", path(d.path())]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["local_only.pgm", "global_only.csv", "hybrid.pgm"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(dirs[1].path().join(name)).unwrap());
    }
}
