use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use canprint_core::evalkit::parse_csv_report;

fn canprint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canprint"))
        .args(args)
        .env_remove("CANPRINT_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMOKE: &str = r#"{
  "schema": 1,
  "sim": { "records_per_class": 10, "rng_seed": 5 },
  "tasks": {
    "channel": {
      "hidden": [12],
      "ecus": ["E1"],
      "channels": ["GXL-0.5m", "GXL-1m", "GXL-2m", "GXL-3m", "GXL-4m", "GXL-5m"],
      "train": { "max_epochs": 100 }
    },
    "ecu": { "hidden": [20], "channels": ["CANDATA-2m"], "train": { "max_epochs": 100 } }
  }
}"#;

fn write_manifest(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("manifest.json");
    fs::write(&p, text).unwrap();
    p
}

/// Simulates, extracts and trains the ECU task; returns (features, model).
fn trained_ecu(dir: &Path) -> (PathBuf, PathBuf) {
    let m = write_manifest(dir, SMOKE);
    let out = dir.join("sim");
    assert_eq!(code(&canprint(&["simulate", "--manifest", s(&m), "--out", s(&out)])), 0);
    let features = dir.join("features.csv");
    let o = canprint(&["extract", "--records", s(&out.join("records.csv")), "--out", s(&features)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let models = dir.join("models");
    let o = canprint(&["train", "--features", s(&features), "--task", "ecu", "--manifest", s(&m), "--out", s(&models)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (features, models.join("model_ecu.json"))
}

#[test]
fn pipeline_writes_all_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), SMOKE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = canprint(&["pipeline", "--manifest", s(&m), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for name in canprint_core::pipeline::pipeline_artifacts() {
        let x = fs::read(a.join(&name)).unwrap_or_else(|_| panic!("{name} missing"));
        assert_eq!(x, fs::read(b.join(&name)).unwrap(), "{name} differs");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 5);
    assert_eq!(summary["channel_classes"], 18);
    assert_eq!(summary["ecu_classes"], 4);
    assert_eq!(summary["total_records"], 720);
}

#[test]
fn seed_flag_changes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), SMOKE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&canprint(&["simulate", "--manifest", s(&m), "--out", s(&a)])), 0);
    assert_eq!(code(&canprint(&["simulate", "--manifest", s(&m), "--seed", "6", "--out", s(&b)])), 0);
    let rec_b = fs::read_to_string(b.join("records.csv")).unwrap();
    assert!(rec_b.starts_with("# schema=1 kind=records seed=6 "));
    assert_ne!(fs::read(a.join("records.csv")).unwrap(), rec_b.into_bytes());
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), r#"{"schema": 1, "sim": {"window_len": -3}}"#);
    let o = canprint(&["simulate", "--manifest", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sim.window_len"), "{}", stderr(&o));

    let m = write_manifest(dir.path(), r#"{"schema": 7}"#);
    let o = canprint(&["pipeline", "--manifest", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("schema"), "{}", stderr(&o));

    let m = write_manifest(dir.path(), r#"{"schema": 1, "identify": {"threshold": 2}}"#);
    let o = canprint(&["simulate", "--manifest", s(&m)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("identify.threshold"));
}

#[test]
fn missing_input_exits_1() {
    let o = canprint(&["extract", "--records", "/nonexistent/records.csv", "--out", "/tmp/never.csv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn wrong_artifact_kind_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _) = trained_ecu(dir.path());
    let o = canprint(&["extract", "--records", s(&features), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("kind"), "{}", stderr(&o));
    let o = canprint(&["eval", "--model", s(&features), "--features", s(&features)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn numeric_failure_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("zero.csv");
    fs::write(
        &rec,
        "# schema=1 kind=records seed=0 config_hash=x\necu,channel,sample_rate_hz,s0,s1,s2,s3\nE1,C,10000000,0,0,0,0\n",
    )
    .unwrap();
    let o = canprint(&["extract", "--records", s(&rec), "--out", s(&dir.path().join("f.csv"))]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn identify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (features, model) = trained_ecu(dir.path());
    let text = fs::read_to_string(&features).unwrap();
    let row = text
        .lines()
        .skip(2)
        .position(|l| l.starts_with("E3,CANDATA-2m,"))
        .unwrap()
        .to_string();

    let o = canprint(&["identify", "--model", s(&model), "--features", s(&features), "--row", &row, "--claim", "E3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"], "MATCH");

    let o = canprint(&["identify", "--model", s(&model), "--features", s(&features), "--row", &row, "--claim", "E1"]);
    assert_eq!(code(&o), 3);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"], "MISMATCH");
    assert_eq!(v["predicted"], "E3");

    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    for layer in doc["weights"].as_array_mut().unwrap() {
        for r in layer.as_array_mut().unwrap() {
            for w in r.as_array_mut().unwrap() {
                *w = 0.0.into();
            }
        }
    }
    for layer in doc["biases"].as_array_mut().unwrap() {
        for b in layer.as_array_mut().unwrap() {
            *b = 0.0.into();
        }
    }
    let flat = dir.path().join("flat.json");
    fs::write(&flat, serde_json::to_string(&doc).unwrap()).unwrap();
    let o = canprint(&["identify", "--model", s(&flat), "--features", s(&features), "--row", &row, "--claim", "E3"]);
    assert_eq!(code(&o), 4);

    let o = canprint(&["identify", "--model", s(&model), "--features", s(&features), "--claim", "E9"]);
    assert_eq!(code(&o), 2);
    let o = canprint(&["identify", "--model", s(&model), "--features", s(&features), "--row", "999999", "--claim", "E1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn identify_accepts_raw_records() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = trained_ecu(dir.path());
    let records = dir.path().join("sim").join("records.csv");
    let text = fs::read_to_string(&records).unwrap();
    let row = text
        .lines()
        .skip(2)
        .position(|l| l.starts_with("E2,CANDATA-2m,"))
        .unwrap()
        .to_string();
    let o = canprint(&["identify", "--model", s(&model), "--records", s(&records), "--row", &row, "--claim", "E2"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn eval_formats() {
    let dir = tempfile::tempdir().unwrap();
    let (features, model) = trained_ecu(dir.path());
    let o = canprint(&["eval", "--model", s(&model), "--features", s(&features), "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let cm = parse_csv_report(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cm.class_names, vec!["E1", "E2", "E3", "E4"]);
    assert_eq!(cm.total(), 4 * 3);

    let o = canprint(&["eval", "--model", s(&model), "--features", s(&features), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["scope"], "held_out");
    let acc = v["test"]["accuracy"].as_f64().unwrap();
    let counts = &v["test"]["counts"];
    let trace: u64 = (0..4).map(|i| counts[i][i].as_u64().unwrap()).sum();
    assert!((acc - trace as f64 / 12.0).abs() < 1e-15);

    let o = canprint(&["eval", "--model", s(&model), "--features", s(&features)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("rows = predicted class"));
    assert!(text.contains("[train]"));
}

#[test]
fn train_defaults_follow_stopping_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), r#"{"schema": 1, "sim": {"records_per_class": 4}}"#);
    let sim = dir.path().join("sim");
    assert_eq!(code(&canprint(&["simulate", "--manifest", s(&m), "--out", s(&sim)])), 0);
    let f = dir.path().join("f.csv");
    assert_eq!(code(&canprint(&["extract", "--records", s(&sim.join("records.csv")), "--out", s(&f)])), 0);
    let o = canprint(&["train", "--features", s(&f), "--task", "ecu", "--manifest", s(&m), "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("model_ecu.json")).unwrap()).unwrap();
    assert_eq!(doc["training"]["max_epochs"], 2000);
    assert_eq!(doc["training"]["grad_tol"], 1e-7);
    assert_eq!(doc["layer_sizes"], serde_json::json!([11, 20, 4]));
    let trace = fs::read_to_string(dir.path().join("trace_ecu.csv")).unwrap();
    assert!(trace.lines().nth(1).unwrap() == "epoch,loss,grad_inf_norm");
}

#[test]
fn rank_outputs_k_features() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _) = trained_ecu(dir.path());
    let o = canprint(&["rank", "--features", s(&features), "--task", "channel", "--k", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["selected"].as_array().unwrap().len(), 4);
    let o = canprint(&["rank", "--features", s(&features), "--task", "channel", "--k", "12"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn frame_then_import_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let wave = dir.path().join("wave.csv");
    let o = canprint(&["frame", "--id", "0x12", "--data", "55AA", "--ecu", "E2", "--channel", "GXL-3m", "--out", s(&wave)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&wave).unwrap();
    assert_eq!(text.lines().next().unwrap(), "time_s,volts");

    let rec = dir.path().join("rec.csv");
    let o = canprint(&[
        "import", "--scope", s(&wave), "--ecu", "E2", "--channel", "GXL-3m", "--windows", "3", "--out", s(&rec),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let records = fs::read_to_string(&rec).unwrap();
    assert_eq!(records.lines().count(), 2 + 3);
    assert!(records.lines().nth(2).unwrap().starts_with("E2,GXL-3m,10000000,"));

    let f = dir.path().join("f.csv");
    assert_eq!(code(&canprint(&["extract", "--records", s(&rec), "--out", s(&f)])), 0);
}

#[test]
fn ideal_frame_length() {
    let o = canprint(&["frame", "--id", "0x12", "--data", "55AA"]);
    assert_eq!(code(&o), 0);
    let frame = canprint_core::canframe::CanFrame::from_hex("0x12", "55AA").unwrap();
    let bits = canprint_core::canframe::encode_frame(&frame).unwrap();
    let rows = String::from_utf8(o.stdout).unwrap().lines().count() - 1;
    assert_eq!(rows, bits.bits.len() * 20);
    let o = canprint(&["frame", "--id", "0x800", "--data", ""]);
    assert_eq!(code(&o), 2);
}

#[test]
fn thread_cap_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_canprint"))
        .args(["frame", "--id", "0x1"])
        .env("CANPRINT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_canprint"))
        .args(["frame", "--id", "0x1"])
        .env("CANPRINT_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}
