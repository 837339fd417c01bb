//! End-to-end tests of the `graspfusion` binary: file IO, exit codes, and
//! the machine-readable error object.

use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graspfusion"))
}

fn write(path: &Path, contents: &str) {
    std::fs::write(path, contents).unwrap();
}

fn detections_fixture() -> String {
    json!({
        "format_version": 1,
        "image": {"width": 640, "height": 480},
        "detections": [
            {"label": "cup", "score": 0.92, "box": {"x1": 100.0, "y1": 100.0, "x2": 200.0, "y2": 200.0}},
            {"label": "apple", "score": 0.85, "box": {"x1": 300.0, "y1": 50.0, "x2": 380.0, "y2": 130.0}}
        ]
    })
    .to_string()
}

fn grasps_fixture() -> String {
    json!({
        "format_version": 1,
        "grasps": [
            {"x": 150.0, "y": 150.0, "theta": 0.3, "width": 40.0, "quality": 0.9},
            {"x": 180.0, "y": 120.0, "theta": -0.2, "width": 30.0, "quality": 0.7},
            {"x": 500.0, "y": 400.0, "theta": 0.0, "width": 25.0, "quality": 0.95}
        ]
    })
    .to_string()
}

#[test]
fn match_selects_best_in_box() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("detections.json");
    let gr = dir.path().join("grasps.json");
    write(&det, &detections_fixture());
    write(&gr, &grasps_fixture());

    let out = bin()
        .args(["match", "--detections"])
        .arg(&det)
        .arg("--grasps")
        .arg(&gr)
        .args(["--target", "cup"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    // the 0.95 candidate sits outside the cup boxes and must lose
    assert_eq!(v["selected"]["quality"], 0.9);
    assert_eq!(v["candidates_considered"], 3);
    assert_eq!(v["discarded"], 1);
    assert_eq!(v["matched_box"]["label"], "cup");
}

#[test]
fn match_label_not_found_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("detections.json");
    let gr = dir.path().join("grasps.json");
    write(&det, &detections_fixture());
    write(&gr, &grasps_fixture());

    let out = bin()
        .args(["match", "--detections"])
        .arg(&det)
        .arg("--grasps")
        .arg(&gr)
        .args(["--target", "banana"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"]["kind"], "LabelNotFound");
}

#[test]
fn match_no_grasp_in_box_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("detections.json");
    let gr = dir.path().join("grasps.json");
    write(&det, &detections_fixture());
    // all candidates far away from the apple box
    write(
        &gr,
        &json!({
            "format_version": 1,
            "grasps": [{"x": 10.0, "y": 10.0, "theta": 0.0, "width": 5.0, "quality": 0.5}]
        })
        .to_string(),
    );

    let out = bin()
        .args(["match", "--detections"])
        .arg(&det)
        .arg("--grasps")
        .arg(&gr)
        .args(["--target", "apple"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"]["kind"], "NoGraspInBox");
}

#[test]
fn malformed_json_reports_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("detections.json");
    write(&det, "{not json");
    let out = bin()
        .args(["match", "--detections"])
        .arg(&det)
        .arg("--grasps")
        .arg(&det)
        .args(["--target", "cup"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"]["kind"], "ParseError");
}

#[test]
fn wrong_format_version_is_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("detections.json");
    let mut fixture: Value = serde_json::from_str(&detections_fixture()).unwrap();
    fixture["format_version"] = json!(9);
    write(&det, &fixture.to_string());
    let gr = dir.path().join("grasps.json");
    write(&gr, &grasps_fixture());
    let out = bin()
        .args(["match", "--detections"])
        .arg(&det)
        .arg("--grasps")
        .arg(&gr)
        .args(["--target", "cup"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"]["kind"], "SchemaError");
}

#[test]
fn gen_scenes_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes.json");
    let out = bin()
        .args(["gen-scenes", "--seed", "9", "--count", "4", "--out"])
        .arg(&scenes)
        .args(["--labels", "1", "--all-in-target", "--incorrect", "1"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = bin()
        .args(["eval", "--scenes"])
        .arg(&scenes)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["acc"], 0.75);
    assert_eq!(v["n_scenes"], 4);
    assert_eq!(v["n_correct"], 3);
}

#[test]
fn transform_identity_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let calib = dir.path().join("calib.json");
    write(
        &calib,
        &json!({
            "fx": 600.0, "fy": 600.0, "cx": 320.0, "cy": 240.0,
            "T_rc": [1.0, 0.0, 0.0, 0.0,
                     0.0, 1.0, 0.0, 0.0,
                     0.0, 0.0, 1.0, 0.0,
                     0.0, 0.0, 0.0, 1.0]
        })
        .to_string(),
    );
    let gr = dir.path().join("grasps.json");
    write(
        &gr,
        &json!({
            "format_version": 1,
            "grasps": [{"x": 320.0, "y": 240.0, "theta": 0.4, "width": 60.0, "quality": 0.8}]
        })
        .to_string(),
    );
    let out = bin()
        .args(["transform", "--calib"])
        .arg(&calib)
        .arg("--grasp")
        .arg(&gr)
        .args(["--depth", "0.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let g = &v["robot_grasps"][0];
    assert_eq!(g["position"][0], 0.0);
    assert_eq!(g["position"][1], 0.0);
    assert_eq!(g["position"][2], 0.5);
    assert_eq!(g["yaw"], 0.4);
    assert_eq!(g["jaw_width"], 0.05);
    assert_eq!(v["width_conversion"], "fx");
}

#[test]
fn transform_rejects_bad_hand_eye_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let calib = dir.path().join("calib.json");
    write(
        &calib,
        &json!({
            "fx": 600.0, "fy": 600.0, "cx": 320.0, "cy": 240.0,
            "T_rc": [2.0, 0.0, 0.0, 0.0,
                     0.0, 1.0, 0.0, 0.0,
                     0.0, 0.0, 1.0, 0.0,
                     0.0, 0.0, 0.0, 1.0]
        })
        .to_string(),
    );
    let gr = dir.path().join("grasps.json");
    write(&gr, &grasps_fixture());
    let out = bin()
        .args(["transform", "--calib"])
        .arg(&calib)
        .arg("--grasp")
        .arg(&gr)
        .args(["--depth", "0.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"]["kind"], "InvalidCalibration");
}

#[test]
fn gradcheck_binary_exits_zero() {
    let out = bin().args(["gradcheck", "--seeds", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert!(v["checks"].as_array().unwrap().len() >= 15);
}
