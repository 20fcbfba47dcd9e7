//! End-to-end runs of the `gdiff` binary: exit codes, outputs and settings layering.

use std::path::Path;
use std::process::{Command, Output};

fn gdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdiff")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    gdiff(args).status.code().unwrap_or(-1)
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn schedule_writes_file_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(code(&["schedule", "--linear", "--T", "1000", "--theta0", "0.001", "-o", &out]), 0);
    let file: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("schedule.json")).unwrap()).unwrap();
    assert_eq!(file["beta"].as_array().unwrap().len(), 1000);
    assert_eq!(manifest(dir.path())["command"], "schedule");
    assert_eq!(code(&["schedule", "--fibonacci", "--n", "30", "-o", &out]), 0);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(code(&["schedule", "-o", &out]), 2);
    assert_eq!(code(&["schedule", "--linear", "-o", &out]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["sample", "-o", &out]), 2);
    assert_eq!(code(&["sample", "--checkpoint", "/nonexistent/model.ckpt", "-o", &out]), 2);
    assert_eq!(code(&["fit-noise", "--source", "bogus", "-o", &out]), 2);
    assert_eq!(code(&["fit-noise", "--source", "model", "-o", &out]), 2);
    assert_eq!(code(&["train", "--kind", "gamma", "--steps", "1", "-o", &out]), 2);
    assert_eq!(code(&["train", "--set", "no_such_key=1", "-o", &out]), 2);
}

#[test]
fn verify_failure_exits_1_and_names_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = gdiff(&["verify", "--only", "lemma1", "--corrupt", "kbar", "--chains", "20000", "-o", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failed checks: lemma1"));
    let csv = std::fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(csv.starts_with("check,case,metric,value,limit,passed\n"));
    assert_eq!(code(&["verify", "--only", "variance,lemma2", "--set", "lemma2_instances=200", "-o", &out]), 0);
}

#[test]
fn train_sample_round_trip_and_sampler_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let t = s(&train_dir);
    let args = ["train", "--kind", "gamma", "--theta0", "0.001", "--steps", "40", "--checkpoint-every", "20", "-o", &t];
    assert_eq!(code(&args), 0);
    assert!(train_dir.join("checkpoints/step-00000020.ckpt").exists());
    let losses = std::fs::read_to_string(train_dir.join("loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 41);
    let ckpt = s(&train_dir.join("model.ckpt"));

    let sample_dir = dir.path().join("sample");
    let sd = s(&sample_dir);
    assert_eq!(code(&["sample", "--checkpoint", &ckpt, "-n", "50", "--trace", "-o", &sd]), 0);
    assert_eq!(std::fs::read_to_string(sample_dir.join("samples.csv")).unwrap().lines().count(), 50);
    assert!(sample_dir.join("trace.csv").exists());
    assert!(manifest(&sample_dir)["metrics"]["wasserstein1_to_mixture1d"].is_number());

    assert_eq!(code(&["sample", "--checkpoint", &ckpt, "--sampler", "ddpm", "-o", &sd]), 2);
    assert_eq!(code(&["sample", "--checkpoint", &ckpt, "--sampler", "ddim", "--steps", "5", "-n", "20", "-o", &sd]), 0);

    let other = dir.path().join("other");
    assert_eq!(code(&["schedule", "--linear", "--T", "100", "-o", &s(&other)]), 0);
    let sf = s(&other.join("schedule.json"));
    assert_eq!(code(&["sample", "--checkpoint", &ckpt, "--schedule-file", &sf, "-n", "5", "-o", &sd]), 2);

    let fit = dir.path().join("fit");
    let fit_args = ["fit-noise", "--source", "model", "--checkpoint", &ckpt, "--repeats", "2", "-n", "200", "-o", &s(&fit)];
    assert_eq!(code(&fit_args), 0);
    assert!(fit.join("fit_noise.svg").exists());
}

#[test]
fn settings_layer_file_env_flags_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("settings.json");
    std::fs::write(&cfg, r#"{"fit-noise": {"repeats": 2, "n": 300, "bins": 20, "t": [100, 500]}}"#).unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_gdiff"))
        .args(["fit-noise", "--config", &s(&cfg), "--bins", "30", "--set", "n=400", "-o", &s(&out)])
        .env("GDIFF_REPEATS", "3")
        .env("GDIFF_BINS", "25")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["config"]["repeats"], 3);
    assert_eq!(m["config"]["bins"], 30);
    assert_eq!(m["config"]["n"], 400);
    assert_eq!(m["config"]["t"], serde_json::json!([100, 500]));
    assert_eq!(std::fs::read_to_string(out.join("fit_noise.csv")).unwrap().lines().count(), 3);
}
