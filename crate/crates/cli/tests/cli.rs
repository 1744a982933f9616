//! End-to-end tests of the `redlab` binary: argument handling, exit codes,
//! and JSON summary output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> PathBuf {
    // Integration tests live next to the binary under target/<profile>/.
    let mut path = std::env::current_exe().expect("test binary path");
    path.pop();
    if path.ends_with("deps") {
        path.pop();
    }
    path.join("redlab")
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("spawn redlab")
}

const TINY_CONFIG: &str = r#"
seed = 9

[dataset]
source = "synthetic"
classes = 3
image_size = 8
noise_sigma = 0.1
samples_per_class = 8

[victims]
families = ["resnet9"]
epochs = 1
batch_size = 8
lr = 0.05
width = 0.0625

[[attacks]]
method = "fgsm"
eps = 0.0627

[mpn]
backbone = "mlp"
format = "perturbation"
epochs = 2
batch_size = 16
lr = 0.05
"#;

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path
}

#[test]
fn missing_config_flag_is_a_config_error() {
    let out = run(&["train-victims"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--config"), "stderr: {stderr}");
}

#[test]
fn nonexistent_config_file_is_a_config_error() {
    let out = run(&["--config", "/no/such/file.toml", "train-victims"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_contents_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "unknown_key = 1\n").unwrap();
    let out = run(&["--config", path.to_str().unwrap(), "train-victims"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_prerequisite_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "attack",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("train-victims"), "stderr: {stderr}");
}

#[test]
fn pipeline_stages_emit_json_summaries_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let base = [
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];

    for sub in ["train-victims", "attack", "build-dataset", "train-mpn"] {
        let mut args = base.to_vec();
        args.push(sub);
        let out = run(&args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{sub} stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let stdout = String::from_utf8_lossy(&out.stdout);
        let summary: serde_json::Value =
            serde_json::from_str(stdout.lines().last().unwrap()).expect("JSON summary line");
        assert_eq!(summary["subcommand"], sub.replace('-', "-"));
        assert_eq!(summary["seed"], 9);
    }

    assert!(out_dir.join("config.json").exists());
    assert!(out_dir.join("zoo/manifest.json").exists());
    assert!(out_dir.join("zoo").read_dir().unwrap().count() >= 27);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "42",
        "train-victims",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary: serde_json::Value =
        serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(summary["seed"], 42);
}
