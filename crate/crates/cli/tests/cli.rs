use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gazegpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazegpt")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = gazegpt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn budget_and_acuity() {
    let v = ok_json(&["budget"]);
    assert_eq!(v["budget"]["reduction"], 10.16015625);
    let v = ok_json(&["budget", "--acuity", "--levels", "4", "--out-px", "480", "--width", "5760", "--height", "4320"]);
    assert_eq!(v["budget"]["reduction"], 27.0);
    assert_eq!(v["acuity"]["required"]["width_px"], 5760.0);
}

#[test]
fn intrinsics_and_projection() {
    let dir = tempfile::tempdir().unwrap();
    let cam = dir.path().join("cam.json");
    let out = gazegpt(&["intrinsics", "--width", "640", "--height", "480", "--out", p(&cam)]);
    assert!(out.status.success());
    let v = ok_json(&["project", "--camera", p(&cam), "--direction", "0,0,1", "--depth", "inf"]);
    assert_eq!(v["pixel"]["u"], 319.5);
    assert_eq!(v["pixel"]["v"], 239.5);
    let v = ok_json(&["project", "--camera", p(&cam), "--direction", "-2,0,1"]);
    assert_eq!(v["in_frame"], false);
}

#[test]
fn synth_crop_and_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("session");
    let cam = dir.path().join("cam.json");
    assert!(gazegpt(&["intrinsics", "--width", "320", "--height", "240", "--out", p(&cam)]).status.success());
    let out = gazegpt(&["synth", "--scene", "crosses", "--camera", p(&cam), "--out", p(&session), "--frames", "0,0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let crops = dir.path().join("crops");
    let plan = ok_json(&["crop", "--session", p(&session), "--t", "0.7", "--out", p(&crops), "--out-px", "48"]);
    assert_eq!(plan["levels"].as_array().unwrap().len(), 3);
    assert_eq!(plan["center"]["u"], 159.5);
    for f in ["crops.json", "level-0.png", "level-2.png", "level-1.json"] {
        assert!(crops.join(f).is_file(), "{f}");
    }

    let t = ok_json(&[
        "query",
        "--session",
        p(&session),
        "--t",
        "0.6",
        "--question",
        "what is this?",
        "--u",
        "10",
        "--v",
        "20",
    ]);
    assert_eq!(t["frame_index"], 1);
    assert_eq!(t["gaze_px"]["u"], 10.0);
    assert_eq!(t["stage_latencies"]["stt"], 0.0);
    assert!(t["response_text"].is_string());

    let bad = gazegpt(&["query", "--session", p(&session), "--t", "9", "--question", "x"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("outside session span"));
}

#[test]
fn failed_stage_exits_nonzero_with_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("s");
    let cam = dir.path().join("cam.json");
    assert!(gazegpt(&["intrinsics", "--width", "160", "--height", "120", "--out", p(&cam)]).status.success());
    assert!(gazegpt(&["synth", "--scene", "empty", "--camera", p(&cam), "--out", p(&session)]).status.success());
    let cfg = dir.path().join("svc.toml");
    std::fs::write(&cfg, "[mock]\nlmm_fault = { kind = \"error\", message = \"down\" }\n").unwrap();
    let out = gazegpt(&["query", "--config", p(&cfg), "--session", p(&session), "--t", "0", "--question", "q"]);
    assert!(!out.status.success());
    let t: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(t["failed_at"], "lmm");
}

#[test]
fn experiments_are_reproducible_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a/trials.csv");
    let b = dir.path().join("b/trials.csv");
    for path in [&a, &b] {
        let out = gazegpt(&["experiment", "selection", "--users", "3", "--seed", "5", "--out", p(path), "--report"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a/pairwise.csv").is_file());

    let r = ok_json(&["report", p(&a), "--json"]);
    assert_eq!(r["n_users"], 3);
    assert_eq!(r["measures"][0]["measure"], "error_deg");

    let c = dir.path().join("c.csv");
    let out = gazegpt(&["experiment", "classification", "--users", "2", "--seed", "1", "--out", p(&c)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = ok_json(&["report", p(&c), "--json"]);
    assert_eq!(text["measures"][0]["measure"], "accuracy");
}

#[test]
fn argument_errors() {
    assert!(!gazegpt(&["query", "--session", "x", "--t", "0"]).status.success());
    assert!(!gazegpt(&["project", "--direction", "1,2"]).status.success());
    assert!(!gazegpt(&["project", "--direction", "0,0,1", "--depth", "-1"]).status.success());
    assert!(!gazegpt(&["serve"]).status.success());
}
