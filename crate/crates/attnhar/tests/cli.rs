use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use attnhar_core::localization::density;
use attnhar_core::gradcheck::case_names;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_attnhar");

const SMALL: &str = r#"{
  "synth": {"n": 40, "seq_len": 128, "segment_len_min": 16, "segment_len_max": 64},
  "w": 8,
  "locate": {"emit": 3}
}"#;

fn attnhar(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    fs::write(&path, SMALL).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_writes_sidecar_and_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = attnhar(&["synth", "--config", p(&cfg), "--seed", "7", "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let sidecar = json(&a.join("synthetic.json"));
    assert_eq!(sidecar["N"], 40);
    assert_eq!(sidecar["seed"], 7);
    for f in ["synthetic.bin", "synthetic.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(a.join("synth_summary.json").exists());
    let c = dir.path().join("c");
    attnhar(&["synth", "--config", p(&cfg), "--seed", "8", "--out", p(&c)]);
    assert_ne!(fs::read(a.join("synthetic.bin")).unwrap(), fs::read(c.join("synthetic.bin")).unwrap());
}

#[test]
fn invalid_configuration_exits_2_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"synth": {"class_proportions": [0.5, 0.5, 0.5, 0.5]}}"#).unwrap();
    let o = attnhar(&["synth", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("proportions"), "{}", stderr(&o));

    fs::write(&cfg, r#"{"split": [0.9, 0.2, 0.1]}"#).unwrap();
    let o = attnhar(&["train", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("split fractions"), "{}", stderr(&o));

    let o = attnhar(&["train", "--variant", "att9"]);
    assert_eq!(code(&o), 2);
    let o = attnhar(&["train", "--dataset", "ucihar", "--data-dir", p(&dir.path().join("missing"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing"), "{}", stderr(&o));
}

#[test]
fn one_epoch_on_32_windows_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("default_len.json");
    fs::write(&cfg, r#"{"synth": {"n": 64}}"#).unwrap();
    let out = dir.path().join("run");
    let start = Instant::now();
    let o = attnhar(&[
        "train", "--config", p(&cfg), "--variant", "none", "--epochs", "1", "--subset", "32", "--out", p(&out), "--quiet",
    ]);
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(elapsed < 60.0, "took {elapsed:.1}s");
    let metrics = json(&out.join("metrics.json"));
    assert_eq!(metrics["train_size"], 32);
    assert_eq!(metrics["variant"], "none");
    assert!(metrics["test_accuracy"].as_f64().unwrap() >= 0.0);
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
}

/// Trains one small model per test so the tests stay independent.
fn train_small(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let cfg = small_config(dir);
    let out = dir.join(name);
    let mut args = vec!["train", "--config", p(&cfg), "--epochs", "2", "--batch", "8", "--out", p(&out), "--quiet"];
    args.extend_from_slice(extra);
    let o = attnhar(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn train_then_eval_writes_metrics_and_throughput() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), "att2", &["--variant", "att2", "--compat", "pc", "--norm", "tanh"]);
    for f in ["checkpoint.json", "checkpoint_final.json", "history.csv", "metrics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let metrics = json(&out.join("metrics.json"));
    assert!(metrics["test_accuracy"].is_number());
    assert_eq!(metrics["variant"], "att2");

    let cfg = small_config(dir.path());
    let o = attnhar(&["eval", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let eval = json(&out.join("eval.json"));
    assert!(eval["throughput_seqs_per_s"].as_f64().unwrap() > 0.0);
    assert_eq!(eval["confusion"].as_array().unwrap().len(), 4);
    assert_eq!(eval["accuracy"], metrics["test_accuracy"]);

    let o = attnhar(&["eval", "--out", p(&out), "--variant", "att3"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mismatch"), "{}", stderr(&o));
}

#[test]
fn eval_without_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = attnhar(&["eval", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("checkpoint.json"), "{}", stderr(&o));
    let o = attnhar(&["eval", "--checkpoint", p(&dir.path().join("nope.json"))]);
    assert_eq!(code(&o), 2);
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|row| row.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn locate_curves_match_offline_density() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), "att3", &["--variant", "att3"]);
    let cfg = small_config(dir.path());
    let o = attnhar(&["locate", "--config", p(&cfg), "--out", p(&out), "--sequences", "0,2,4,5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = json(&out.join("locate_metrics.json"));
    let hit = metrics["hit_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&hit));
    assert_eq!(metrics["sequences"], 4);
    assert_eq!(metrics["curves_written"], 3);
    // deepest of three taps over 128 samples: 32 positions, stride 4
    assert_eq!(metrics["positions"], 32);
    assert_eq!(metrics["stride_to_raw"], 4);

    for idx in [0, 2, 4] {
        let (header, rows) = read_csv(&out.join(format!("seq_{idx}_curve.csv")));
        assert_eq!(header, ["feature_index", "score", "weight", "density", "raw_center"]);
        assert_eq!(rows.len(), 32);
        let scores: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let offline = density(&scores, 8).unwrap();
        for (row, d) in rows.iter().zip(&offline) {
            assert!((row[3] - d).abs() <= 1e-9 * (1.0 + d.abs()), "{} vs {d}", row[3]);
            assert!((row[2] - row[1].tanh()).abs() <= 1e-12);
            assert_eq!(row[4], row[0] * 4.0);
        }
        let (header, rows) = read_csv(&out.join(format!("seq_{idx}_profile.csv")));
        assert_eq!(header, ["level", "index", "score", "weight"]);
        assert_eq!(rows.len(), 128 + 64 + 32);
    }
    assert!(!out.join("seq_5_curve.csv").exists());

    let windows = json(&out.join("windows.json"));
    let entries = windows.as_array().unwrap();
    assert_eq!(entries.len(), 4);
    for e in entries {
        let gt = &e["ground_truth"].as_array().unwrap()[0];
        assert!(gt["end"].as_u64().unwrap() > gt["start"].as_u64().unwrap());
        for w in e["windows"].as_array().unwrap() {
            assert!(w["end"].as_u64().unwrap() <= 128);
        }
    }

    let o = attnhar(&["locate", "--out", p(&out), "--sequences", "999"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn locate_on_plain_cnn_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), "plain", &["--variant", "none"]);
    let o = attnhar(&["locate", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("localization requires attention"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_lists_every_case() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("gc.json");
    let o = attnhar(&["gradcheck", "--seeds", "2", "--report", p(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let listed: Vec<String> = json(&report)["cases"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(listed, case_names());
    for name in case_names() {
        assert!(stdout.contains(name), "{name} missing from output");
    }
}

#[test]
fn injected_gradient_fault_exits_1() {
    let o = attnhar(&["gradcheck", "--seeds", "1", "--inject-fault", "compat_pc"]);
    assert_eq!(code(&o), 1);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("failing: compat_pc"), "{stdout}");
}
