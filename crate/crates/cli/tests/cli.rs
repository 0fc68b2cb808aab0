//! Runs the `ctwin` binary end to end on a small synthetic bundle.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"{"train_rows": 6000, "validation_rows": 6000}"#;

fn ctwin(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("config.json");
    if !config.exists() {
        fs::create_dir_all(dir).unwrap();
        fs::write(&config, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_ctwin"))
        .args(args)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ctwin(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A bundle taken through synth, discover, fit and detect once.
fn pipeline() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let tmp = TempDir::new().unwrap();
        let d = tmp.path();
        ok(d, &["synth", "--template", "swat51", "--attacks", "suite-v1", "--seed", "3"]);
        let catalog = d.join("catalog.json");
        ok(d, &["discover", "--catalog", catalog.to_str().unwrap()]);
        ok(d, &["fit"]);
        ok(d, &["detect"]);
        tmp
    })
    .path()
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    ok(a.path(), &["synth", "--seed", "11"]);
    ok(b.path(), &["synth", "--seed", "11"]);
    ok(c.path(), &["synth", "--seed", "12"]);
    for name in ["bundle.json", "schema.json", "catalog.json", "truth_graph.json", "train.csv", "validation.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_ne!(
        fs::read(a.path().join("train.csv")).unwrap(),
        fs::read(c.path().join("train.csv")).unwrap()
    );
    let bundle = json(a.path().join("bundle.json"));
    assert_eq!(bundle["seed"], 11);
    assert_eq!(bundle["variables"], 51);
}

#[test]
fn usage_errors_exit_with_two() {
    let d = TempDir::new().unwrap();
    for args in [
        vec!["synth", "--template", "nope"],
        vec!["synth", "--attacks", "suite-v9"],
        vec!["whatif", "--from", "10", "--outcome", "LIT101"],
        vec!["frobnicate"],
    ] {
        let out = ctwin(d.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let bad = d.path().join("bad.json");
    fs::write(&bad, r#"{"alhpa": 0.1}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ctwin"))
        .args(["synth", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_artifacts_are_consistent() {
    let d = pipeline();
    let graph = json(d.join("graph.json"));
    assert!(graph["edges"].as_array().is_some_and(|e| !e.is_empty()));
    let detector = json(d.join("detector.json"));
    let detection = json(d.join("detection.json"));
    assert_eq!(detector["scm_sha256"], detection["scm_sha256"]);
    assert!(detector["threshold"].as_f64().unwrap() > 0.0);
    assert!(detection["metrics"]["f1"].as_f64().unwrap() > 0.8);

    let stdout = ok(d, &["explain"]);
    assert!(stdout.contains("rank"));
    let explain = json(d.join("explain.json"));
    assert!(!explain["names"].as_array().unwrap().is_empty());

    ok(d, &["whatif", "--set", "P101=0", "--from", "500", "--outcome", "PIT101", "--samples", "64"]);
    let w = json(d.join("whatif.json"));
    assert_eq!(w["to"], 560);
    assert!(w["point"].as_f64().unwrap().is_finite());
}

#[test]
fn model_changes_invalidate_the_detector() {
    let src = pipeline();
    let d = TempDir::new().unwrap();
    for name in ["config.json", "schema.json", "graph.json", "validation.csv", "test.csv", "detector.json"] {
        fs::copy(src.join(name), d.path().join(name)).unwrap();
    }
    // A model fitted on other data no longer matches the calibrated detector.
    let validation = d.path().join("validation.csv");
    ok(d.path(), &["fit", "--data", validation.to_str().unwrap()]);
    let out = ctwin(d.path(), &["explain"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("artifact hash mismatch"));
}

#[test]
fn stream_emits_one_line_per_row() {
    let src = pipeline();
    let d = TempDir::new().unwrap();
    for name in ["config.json", "schema.json", "scm.json", "validation.csv"] {
        fs::copy(src.join(name), d.path().join(name)).unwrap();
    }
    let rows: Vec<&str> = fs::read_to_string(src.join("test.csv")).unwrap().leak().lines().collect();
    let short = d.path().join("short.csv");
    fs::write(&short, rows[..301].join("\n") + "\n").unwrap();
    let validation = d.path().join("validation.csv");
    let stdout = ok(
        d.path(),
        &[
            "detect",
            "--stream",
            "--data",
            short.to_str().unwrap(),
            "--validation",
            validation.to_str().unwrap(),
        ],
    );
    let lines: Vec<Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 300);
    let cold = lines.iter().take_while(|l| l["mcai"].is_null()).count();
    assert!(cold >= 1 && cold <= 5, "{cold} cold-start rows");
    assert!(lines[cold..].iter().all(|l| l["mcai"].is_number() && l["top"].is_string()));
}
