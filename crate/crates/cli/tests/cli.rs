use std::fs;
use std::path::Path;

use fdtkit::emulator::LagModelBank;
use fdtkit_cli::dispatch;
use fdtkit_cli::manifest::RunManifest;
use serde_json::Value;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["fdtkit"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// synth + preprocess into `root`, returning the anomaly directory.
fn prepared(root: &Path) -> std::path::PathBuf {
    let raw = root.join("raw");
    let anoms = root.join("anoms");
    assert_eq!(
        run(&["synth", "--out", p(&raw), "--mesh-level", "0", "--members", "6", "--months", "120", "--burn-in", "50"]),
        0
    );
    assert_eq!(run(&["preprocess", "--data", p(&raw.join("data")), "--out", p(&anoms), "--split", "0.5,0.25,0.25"]), 0);
    anoms
}

#[test]
fn icosphere_level_five() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mesh");
    assert_eq!(run(&["icosphere", "--level", "5", "--out", p(&out)]), 0);
    assert_eq!(json(&out.join("mesh.json"))["vertex_count"], 10242);
    let m = RunManifest::load(&out.join("run.json")).unwrap();
    assert_eq!(m.subcommand, "icosphere");
    assert_eq!(m.seed, fdtkit_cli::DEFAULT_SEED);
    assert!(out.join("timings.json").exists());
}

#[test]
fn usage_and_validation_exit_codes() {
    assert_eq!(run(&["icosphere", "--level", "1", "--out", "x", "--bogus"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["icosphere", "--level", "notanumber", "--out", "x"]), 2);
    assert_eq!(run(&["--help"]), 0);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["icosphere", "--level", "99", "--out", p(dir.path())]), 1);
    assert_eq!(run(&["preprocess", "--data", p(&dir.path().join("missing")), "--out", p(dir.path())]), 1);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let anoms = prepared(root);
    let split = json(&anoms.join("split.json"));
    assert_eq!(split["train"].as_array().unwrap().len(), 3);

    let bank = root.join("bank");
    let lags = "1,2,3,4,5,6,12,24,36,48";
    assert_eq!(run(&["train", "--data", p(&anoms), "--out", p(&bank), "--lags", lags, "--kind", "linear", "--ridge", "0.01"]), 0);
    let loaded = LagModelBank::load(&bank).unwrap();
    assert_eq!(loaded.len(), 10);

    let mlp = root.join("mlp");
    assert_eq!(
        run(&[
            "train", "--data", p(&anoms), "--out", p(&mlp), "--lags", "1-3", "--hidden-layers", "1", "--hidden-width", "8",
            "--epochs", "1", "--batch-size", "16", "--parallel-lags", "2",
        ]),
        0
    );
    assert_eq!(LagModelBank::load(&mlp).unwrap().lags(), vec![1, 2, 3]);

    let eval = root.join("eval");
    assert_eq!(run(&["eval", "--data", p(&anoms), "--bank", p(&bank), "--out", p(&eval)]), 0);
    let metrics = json(&eval.join("metrics.json"));
    assert_eq!(metrics["lags"].as_array().unwrap().len(), 10);
    assert_eq!(metrics["members"], split["test"]);

    let scenario = root.join("nep.json");
    fs::write(&scenario, r#"{"regions": ["NEP"], "amplitudes": {"x": -1.0}, "samples": 100}"#).unwrap();
    let resp = root.join("resp");
    assert_eq!(
        run(&["respond", "--scenario", p(&scenario), "--bank", p(&bank), "--data", p(&anoms), "--out", p(&resp)]),
        0
    );
    for f in ["emulator/response.json", "classical/response.json", "scenario.json", "run.json", "timings.json"] {
        assert!(resp.join(f).exists(), "{f} missing");
    }
    let m = RunManifest::load(&resp.join("run.json")).unwrap();
    assert_eq!(m.outputs["emulator"], "emulator");
    assert_eq!(m.config["scenario"]["rule"], "interp-quadratic");
}

#[test]
fn config_file_wins_over_flags() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let anoms = prepared(root);
    let config = root.join("train.json");
    fs::write(&config, r#"{"lags": [1, 2], "emulator": {"kind": "linear", "ridge": 0.5}}"#).unwrap();
    let bank = root.join("bank");
    assert_eq!(
        run(&["train", "--data", p(&anoms), "--out", p(&bank), "--config", p(&config), "--ridge", "2.0", "--lags", "1-4"]),
        0
    );
    let m = RunManifest::load(&bank.join("run.json")).unwrap();
    assert_eq!(m.config["emulator"]["ridge"], 0.5);
    assert_eq!(m.config["lags"], serde_json::json!([1, 2]));
    assert_eq!(m.inputs["config"], p(&config));

    // flags fill fields the file leaves out
    fs::write(&config, r#"{"emulator": {"kind": "linear"}}"#).unwrap();
    assert_eq!(run(&["train", "--data", p(&anoms), "--out", p(&bank), "--config", p(&config), "--lags", "3"]), 0);
    assert_eq!(LagModelBank::load(&bank).unwrap().lags(), vec![3]);

    // mlp-only options on a linear bank
    assert_eq!(run(&["train", "--data", p(&anoms), "--out", p(&bank), "--kind", "linear", "--epochs", "3", "--lags", "1"]), 1);
    assert_eq!(run(&["train", "--data", p(&anoms), "--out", p(&bank), "--lags", "1", "--kind", "cnn"]), 1);
}

#[test]
fn respond_from_flags_without_bank() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let anoms = prepared(root);
    let out = root.join("resp");
    assert_eq!(
        run(&[
            "respond", "--data", p(&anoms), "--out", p(&out), "--region", "SEP", "--region", "-10,10,350,20",
            "--amplitude", "x=2", "--lags", "0-10", "--rule", "sum",
        ]),
        0
    );
    assert!(out.join("classical/response.json").exists());
    assert!(!out.join("emulator").exists());
    // invalid scenario fields and output-channel forcing fail validation
    assert_eq!(run(&["respond", "--data", p(&anoms), "--out", p(&out), "--region", "XYZ", "--amplitude", "x=1"]), 1);
    assert_eq!(run(&["respond", "--data", p(&anoms), "--out", p(&out), "--region", "NEP", "--amplitude", "y=1"]), 1);
    assert_eq!(run(&["respond", "--data", p(&anoms), "--out", p(&out), "--region", "NEP", "--skip-classical"]), 1);
}
