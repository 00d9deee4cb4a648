//! End-to-end checks of the command-line surface: subcommands, exit
//! codes, and the debug matrix dump.

use std::path::Path;
use std::process::Command;

fn longmem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_longmem"))
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("out");
    let config = format!(
        r#"
[run]
out_dir = "{}"
seed = 11

[simulate]
grid = [5, 5, 5]
t = 64
n_subjects = 8

[[simulate.effects]]
covariate = "age"
roi = 2
size = 0.005
baseline = 0.5

[estimate]
n_iter = 200
n_burn = 60
thin = 1
diagnostic_voxels = 1

[basis]
local_threshold = 0.9
global_threshold = 0.9

[group]
n_iter = 650
n_burn = 120

[infer]
min_cluster = 4
"#,
        out.display()
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn usage_error_exits_1() {
    let status = longmem().arg("frobnicate").status().unwrap();
    assert_eq!(status.code(), Some(1));

    let status = longmem().args(["run"]).status().unwrap(); // missing --config
    assert_eq!(status.code(), Some(1));
}

#[test]
fn missing_config_exits_2() {
    let status = longmem().args(["run", "--config", "/nonexistent/x.toml"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn bad_config_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[infer]\nzeta = 0.8\n").unwrap();
    let status = longmem()
        .args(["run", "--config", path.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn dump_w_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.csv");
    let status = longmem()
        .args([
            "dump-w",
            "--t",
            "8",
            "--wavelet",
            "haar",
            "--levels",
            "2",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 8);
}

#[test]
fn full_run_by_stages_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();

    // Stage subcommands in dependency order.
    for sub in ["simulate", "estimate-subject", "build-basis", "group-regress", "infer", "report"]
    {
        let output = longmem().args([sub, "--config", cfg]).output().unwrap();
        assert_eq!(
            output.status.code(),
            Some(0),
            "{sub}: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let out = dir.path().join("out");
    assert!(out.join("report").join("report.json").exists());
    assert!(out.join("infer").join("age_sig.nii.gz").exists());
    assert!(out.join("run_manifest.json").exists());

    // `run` with a stage subset and seed override re-runs those stages.
    let status = longmem()
        .args(["run", "--config", cfg, "--stage", "group,infer,report", "--seed", "12"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    // Standalone single-volume estimation.
    let vol = out.join("simulate").join("sub-0000.nii.gz");
    let mask = out.join("simulate").join("mask.nii.gz");
    let single_out = dir.path().join("single");
    let status = longmem()
        .args([
            "estimate-subject",
            "--config",
            cfg,
            "--volume",
            vol.to_str().unwrap(),
            "--mask",
            mask.to_str().unwrap(),
            "--out",
            single_out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(single_out.join("sub-0000_alpha-mean.nii.gz").exists());
}
