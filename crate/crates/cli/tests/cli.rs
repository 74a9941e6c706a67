use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SYNTH_CONFIG: &str = r#"{
  "frames": 90,
  "image_size": 200,
  "fragmentation_grades": [1, 1, 0, 0],
  "noise": {"logit_sigma": 1.5, "mask_jitter_px": 1.0, "confidence_sigma": 0.05, "fragmentation_sigma": 0.3, "seg_flip_rate": 0.05}
}"#;

fn embryo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embryo")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = embryo(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn setup(dir: &Path) {
    fs::write(dir.join("sc.json"), SYNTH_CONFIG).unwrap();
    fs::write(dir.join("pc.json"), r#"{"roi_side": 140}"#).unwrap();
    ok(dir, &["synth", "--config", "sc.json", "--pipeline-config", "pc.json", "--out", "data", "--embryos", "2", "--seed", "7"]);
}

#[test]
fn synth_run_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let embryo_dir = dir.join("data/synthetic_0000");
    for f in ["movie.json", "truth.json", "synth_config.json", "zona.ndjson", "stage.ndjson", "cells.ndjson"] {
        assert!(embryo_dir.join(f).exists(), "{f} missing");
    }

    let movie = "data/synthetic_0000/movie.json";
    ok(dir, &["run", "--movie", movie, "--backends", "data/synthetic_0000", "--config", "pc.json", "--out", "file.json"]);
    ok(dir, &["run", "--movie", movie, "--backends", "synth", "--config", "pc.json", "--out", "synth.json"]);
    assert_eq!(fs::read(dir.join("file.json")).unwrap(), fs::read(dir.join("synth.json")).unwrap());

    let truth = "data/synthetic_0000/truth.json";
    ok(dir, &["eval", "--result", "file.json", "--truth", truth, "--out", "reports/full.json", "--csv", "full.csv"]);
    fs::write(dir.join("nodp.json"), r#"{"roi_side": 140, "use_dp": false}"#).unwrap();
    ok(dir, &["run", "--movie", movie, "--backends", "synth", "--config", "nodp.json", "--out", "nodp_result.json"]);
    ok(dir, &["eval", "--result", "nodp_result.json", "--truth", truth, "--out", "reports/nodp.json"]);

    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("reports/full.json")).unwrap()).unwrap();
    assert_eq!(report["setting"], "full");
    assert!(report["stage"]["accuracy"].as_f64().unwrap() > 0.5);
    let csv = fs::read_to_string(dir.join("full.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("embryo_id,setting,frames,"));

    ok(dir, &["report", "--reports", "reports/*.json", "--out", "table.csv"]);
    let table = fs::read_to_string(dir.join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "setting,embryos,fragmentation_pct,stage_pct,blastomere_map,pronuclei_map");
    assert!(lines[1].starts_with("Full Setting,1,"));
    assert!(lines[2].starts_with("No Dynamic Programming,1,"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let movie = "data/synthetic_0001/movie.json";

    let out = embryo(dir, &["run", "--movie", "missing.json", "--backends", "synth", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(dir.join("bad.json"), r#"{"merge_iou_threshold": 1.5}"#).unwrap();
    let out = embryo(dir, &["run", "--movie", movie, "--backends", "synth", "--config", "bad.json", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(1));

    // A stage file with a frame missing makes the file backend fail.
    let stage = dir.join("data/synthetic_0001/stage.ndjson");
    let text = fs::read_to_string(&stage).unwrap();
    let kept: Vec<&str> = text.lines().take(10).collect();
    fs::write(&stage, kept.join("\n") + "\n").unwrap();
    let out = embryo(dir, &["run", "--movie", movie, "--backends", "data/synthetic_0001", "--config", "pc.json", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage"));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(tree(&path));
        } else {
            out.push((path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("sc.json"), SYNTH_CONFIG).unwrap();
    fs::write(dir.join("pc.json"), r#"{"roi_side": 140}"#).unwrap();
    for (threads, out) in [("1", "a"), ("4", "b")] {
        ok(dir, &["--threads", threads, "synth", "--config", "sc.json", "--pipeline-config", "pc.json", "--out", out, "--embryos", "4", "--seed", "3"]);
    }
    assert_eq!(tree(&dir.join("a")), tree(&dir.join("b")));
}
