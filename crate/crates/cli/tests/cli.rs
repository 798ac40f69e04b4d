use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanekit")).args(args).current_dir(cwd).env_remove("LANEKIT_OUT").output().unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> Value {
    let out = run(cwd, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("stderr line")).expect("JSON error line")
}

fn read(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn ground_truth_export_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "data", "--scenes", "12", "--profile", "hill", "--seed", "3"]);
    let s = ok(d, &["predict", "--data", "data", "--out", "gt", "--from-gt"]);
    assert_eq!(s["scenes"], 2);
    ok(d, &["eval", "--data", "data", "--pred", "gt", "--out", "eval"]);
    let m = read(&d.join("eval/metrics.json"));
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["standard"]["f1"], 1.0);
    assert_eq!(m["standard"]["ap"], 1.0);
    assert_eq!(m["standard"]["x_err_far"], 0.0);
    assert_eq!(m["once"]["precision"], 1.0);
    assert_eq!(m["once"]["cd_error"], 0.0);
    let csv = std::fs::read_to_string(d.join("eval/metrics.csv")).unwrap();
    assert!(csv.starts_with("schema_version,metric,value\n"));
    assert!(csv.contains("1,standard.f1,1"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), "seed = 9\n[synth]\nscenes = 5\nval_fraction = 0.4\n").unwrap();
    ok(d, &["--config", "run.toml", "synth", "--out", "data", "--scenes", "3"]);
    let manifest = read(&d.join("data/manifest.json"));
    assert_eq!(manifest["scenes"].as_array().unwrap().len(), 3);
    let echo = read(&d.join("data/config.json"));
    assert_eq!(echo["seed"], 9);
    assert_eq!(echo["synth"]["scenes"], 3);
    assert_eq!(echo["synth"]["val_fraction"], 0.4);
}

#[test]
fn out_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lanekit"))
        .args(["synth", "--scenes", "2"])
        .current_dir(dir.path())
        .env("LANEKIT_OUT", "envdata")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("envdata/manifest.json").exists());
}

#[test]
fn training_reduces_loss_and_predicts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "data", "--scenes", "20", "--seed", "1"]);
    let s = ok(d, &["train", "--data", "data", "--out", "model", "--epochs", "8", "--hidden", "32"]);
    let (first, last) = (s["initial_loss"].as_f64().unwrap(), s["final_loss"].as_f64().unwrap());
    assert!(last < 0.5 * first, "{first} -> {last}");
    let curve = std::fs::read_to_string(d.join("model/loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 9);
    assert!(d.join("model/model.ckpt").exists());
    ok(d, &["predict", "--data", "data", "--checkpoint", "model/model.ckpt", "--out", "pred"]);
    let set = read(&d.join("pred/predictions.json"));
    assert_eq!(set["source"], "model");
    assert_eq!(set["scenes"].as_array().unwrap().len(), 4);
    let out = run(d, &["predict", "--data", "data", "--checkpoint", "model/model.ckpt", "--out", "p2", "--iters", "2"]);
    assert_eq!(out.status.code(), Some(2));
    ok(d, &["plot", "--data", "data", "--pred", "pred", "--out", "plots", "--max", "2"]);
    let svg = std::fs::read_to_string(d.join("plots/scene_0016.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn temporal_flags_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "plain", "--scenes", "4"]);
    let out = run(d, &["train", "--data", "plain", "--out", "m", "--fusion", "weighted_sum", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "config");

    ok(d, &["synth", "--out", "seq", "--scenes", "4", "--temporal"]);
    let manifest = read(&d.join("seq/manifest.json"));
    assert_eq!(manifest["scenes"].as_array().unwrap().len(), 8);
    assert_eq!(manifest["scenes"][1]["prev"], "scene_0000");
    ok(d, &["train", "--data", "seq", "--out", "m", "--fusion", "weighted_sum", "--epochs", "1", "--hidden", "8"]);
    let out = run(d, &["predict", "--data", "seq", "--checkpoint", "m/model.ckpt", "--out", "p"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(d, &["predict", "--data", "seq", "--checkpoint", "m/model.ckpt", "--out", "p", "--fusion", "linear_fusion"]);
    assert_eq!(out.status.code(), Some(2));
    ok(d, &["predict", "--data", "seq", "--checkpoint", "m/model.ckpt", "--out", "p", "--temporal"]);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["synth"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"], "config");
    assert_eq!(e["code"], 2);

    let out = run(d, &["eval", "--data", "missing", "--pred", "missing", "--out", "e"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "io");

    std::fs::create_dir(d.join("bad")).unwrap();
    std::fs::write(d.join("bad/manifest.json"), "{ not json").unwrap();
    let out = run(d, &["train", "--data", "bad", "--out", "m"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_line(&out)["error"], "data");

    std::fs::write(d.join("bad.toml"), "[synth]\nscnes = 3\n").unwrap();
    let out = run(d, &["--config", "bad.toml", "synth", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(d, &["synth", "--out", "x", "--profile", "mountain"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn refine_keeps_scores_and_marks_source() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "data", "--scenes", "6", "--seed", "5"]);
    ok(d, &["predict", "--data", "data", "--out", "gt", "--from-gt", "--split", "all"]);
    ok(d, &["refine", "--pred", "gt", "--out", "r", "--steps", "20"]);
    let set = read(&d.join("r/predictions.json"));
    assert_eq!(set["source"], "ground_truth+refined");
    assert_eq!(set["scenes"].as_array().unwrap().len(), 6);
    let before = read(&d.join("gt/scene_0000/lanes.json"));
    let after = read(&d.join("r/scene_0000/lanes.json"));
    assert_eq!(before.as_array().unwrap().len(), after.as_array().unwrap().len());
    assert_eq!(before[0]["score"], after[0]["score"]);
    let out = run(d, &["refine", "--pred", "gt", "--out", "gt"]);
    assert_eq!(out.status.code(), Some(2));
}
