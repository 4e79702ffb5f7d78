use std::path::Path;
use std::process::{Command, Output};

fn ctrlf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrlf")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_train_index_search_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = ok_json(&ctrlf(&[
        "synth", "--out", p(d), "--pages", "4", "--test-pages", "1", "--lexicon", "6", "--renders", "2", "--seed", "3",
    ]));
    assert_eq!(synth["train_pages"], 3);
    let (config, train_manifest, test_manifest) =
        (d.join("config.toml"), d.join("train/manifest.json"), d.join("test/manifest.json"));
    assert!(config.is_file() && train_manifest.is_file() && d.join("test/images/synth-003.png").is_file());

    let model = d.join("m.cfn");
    let trained = ok_json(&ctrlf(&[
        "train", "--manifest", p(&train_manifest), "--config", p(&config), "--out", p(&model), "--iterations", "30",
        "--hidden", "32",
    ]));
    assert_eq!(trained["iterations"], 30);

    let index = d.join("i.idx");
    let summary = ok_json(&ctrlf(&[
        "index", "--manifest", p(&test_manifest), "--model", p(&model), "--config", p(&config), "--out", p(&index),
    ]));
    assert_eq!(summary["pages"], 1);
    assert_eq!(summary["model_id"], trained["model_id"]);

    let found = ok_json(&ctrlf(&["search", "--index", p(&index), "--query", "the", "--k", "5"]));
    let results = found["results"].as_array().unwrap();
    assert_eq!(results.len(), 5);
    let sims: Vec<f64> = results.iter().map(|r| r["similarity"].as_f64().unwrap()).collect();
    assert!(sims.windows(2).all(|w| w[0] >= w[1]));

    // The index was built with the synthetic config, not the defaults.
    let default_cfg = ctrlf(&["eval", "--manifest", p(&test_manifest), "--index", p(&index)]);
    assert_eq!(default_cfg.status.code(), Some(2));
    let report = ok_json(&ctrlf(&[
        "eval", "--manifest", p(&test_manifest), "--index", p(&index), "--config", p(&config), "--overlap", "0.25",
        "--model", p(&model),
    ]));
    let protocols: Vec<&str> = report["protocols"].as_array().unwrap().iter().map(|p| p["protocol"].as_str().unwrap()).collect();
    assert_eq!(protocols, ["qbs", "qbe", "transcription"]);
    assert!(report["protocols"][0]["map"].as_f64().unwrap() >= 0.0);
    assert!(report["recall"]["0.25"].as_f64().unwrap() > 0.9);

    let other = d.join("other.toml");
    std::fs::write(&other, "resize_pages = false\n[thresholds]\nwordness = 0.5\n").unwrap();
    let mismatch = ctrlf(&["search", "--index", p(&index), "--query", "the", "--config", p(&other)]);
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("config"));
}

#[test]
fn eval_with_missing_inputs_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let out = ctrlf(&["eval", "--manifest", "missing.json", "--index", p(&dir.path().join("none.idx"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [&["search", "--query", "the"][..], &["search", "--index", "i", "--query", "the", "--bogus"], &["frobnicate"], &[]] {
        let out = ctrlf(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(ctrlf(&["search", "--index", "i", "--query", "q", "--k", "0"]).status.code(), Some(1));
}

#[test]
fn help_and_version_succeed() {
    let help = ctrlf(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("serve"));
    assert_eq!(ctrlf(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_index_is_a_runtime_error() {
    let out = ctrlf(&["search", "--index", "/nonexistent/i.idx", "--query", "the"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
