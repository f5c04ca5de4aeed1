use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mosaicmem")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn spec() -> Value {
    json!({
        "seed": 5,
        "primitives": [
            {"kind": "plane", "center": [0.0, 0.0, 8.0], "size": [12.0, 10.0], "resolution": [120, 100],
             "color": {"kind": "checker", "a": [1.0, 1.0, 1.0], "b": [0.0, 0.2, 0.5], "cells": [12, 10]}}
        ],
        "camera": {"focal": 64.0, "width": 64, "height": 64},
        "trajectory": {"kind": "revisit_loop", "start": [-0.5, 0.0, 0.0], "end": [0.5, 0.0, 0.0], "frames": 6}
    })
}

#[test]
fn end_to_end_revisit() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let spec_path = root.join("spec.json");
    std::fs::write(&spec_path, spec().to_string()).unwrap();
    let (ds, mem, ret) = (root.join("ds"), root.join("mem"), root.join("ret"));
    ok_json(&["simulate", "--spec", s(&spec_path), "--out", s(&ds)]);
    let manifest: Value = serde_json::from_slice(&std::fs::read(ds.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["extrinsics_convention"], "world_to_camera");
    let cam5 = manifest["cameras"][5].clone();

    ok_json(&["lift", "--dataset", s(&ds), "--out", s(&mem), "--frames", "0,1,2"]);
    let cam_path = root.join("cam.json");
    std::fs::write(&cam_path, cam5.to_string()).unwrap();
    ok_json(&["retrieve", "--memory", s(&mem), "--camera", s(&cam_path), "--out", s(&ret), "--time", "5"]);

    // frame 5 repeats the pose of frame 0, which is in memory
    let report = ok_json(&["eval", "--dataset", s(&ds), "--retrieval", s(&ret)]);
    assert_eq!(report["psnr"], 99.0);
    assert_eq!(report["rot_err_deg"], 0.0);
    assert_eq!(report["n_regions"], 1);
    assert!(report["lpips"].is_null());

    let preview = root.join("p.ppm");
    let info = ok_json(&["preview", "--retrieval", s(&ret), "--out", s(&preview), "--scale", "2"]);
    assert_eq!(info["width"], 16);
    assert!(std::fs::read(&preview).unwrap().starts_with(b"P6"));

    let header = ok_json(&["inspect", s(&ds.join("frame_0000_latent.mmt"))]);
    assert_eq!(header["dims"], json!([8, 8, 3]));
}

#[test]
fn editing_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let spec_path = root.join("spec.json");
    std::fs::write(&spec_path, spec().to_string()).unwrap();
    let (ds, mem) = (root.join("ds"), root.join("mem"));
    ok_json(&["simulate", "--spec", s(&spec_path), "--out", s(&ds)]);
    ok_json(&["lift", "--dataset", s(&ds), "--out", s(&mem), "--frames", "0"]);
    let count = |dir: &Path| -> usize {
        let m: Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
        m["patches"].as_array().unwrap().len()
    };
    let n = count(&mem);
    assert_eq!(n, 16);

    let xf = root.join("xf.json");
    std::fs::write(&xf, r#"{"R":[1,0,0,0,1,0,0,0,1],"t":[20,0,0]}"#).unwrap();
    let dup = root.join("dup");
    ok_json(&["mem", "duplicate", "--memory", s(&mem), "--out", s(&dup), "--ids", "0,1", "--transform", s(&xf)]);
    assert_eq!(count(&dup), n + 2);
    let del = root.join("del");
    ok_json(&["mem", "delete", "--memory", s(&dup), "--out", s(&del), "--box", "10,-100,-100,100,100,100"]);
    assert_eq!(count(&del), n);
    let st = root.join("st");
    ok_json(&["mem", "stitch", "--a", s(&mem), "--b", s(&mem), "--transform", s(&xf), "--out", s(&st)]);
    assert_eq!(count(&st), 2 * n);
    let code = run(&["mem", "delete", "--memory", s(&mem), "--out", s(&root.join("e2")), "--box", "1,2,3"]).status.code();
    assert_eq!(code, Some(2));
    let empty = root.join("empty");
    ok_json(&["mem", "delete", "--memory", s(&mem), "--out", s(&empty), "--all"]);
    assert_eq!(count(&empty), 0);
}

#[test]
fn ode_demo_reports_the_error() {
    let out = ok_json(&["ode-demo", "--field", "constant", "--method", "euler", "--steps", "64", "--dim", "3"]);
    assert_eq!(out["max_rel_err"], 0.0);
    let lin = ok_json(&["ode-demo", "--field", "linear", "--steps", "50"]);
    assert!(lin["max_rel_err"].as_f64().unwrap() < 1e-3);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    let bad = root.join("bad.json");
    std::fs::write(&bad, r#"{"seed":1,"primitives":[],"trajectory":{"kind":"orbit","radius":-1,"frames":3}}"#).unwrap();
    assert_eq!(run(&["simulate", "--spec", s(&bad), "--out", s(&root.join("x"))]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--spec", s(&root.join("missing.json")), "--out", s(&root.join("x"))]).status.code(), Some(3));
    assert_eq!(run(&["inspect", s(&root.join("missing.mmt"))]).status.code(), Some(3));
    assert_eq!(run(&["ode-demo", "--steps", "0"]).status.code(), Some(2));

    let spec_path = root.join("spec.json");
    std::fs::write(&spec_path, spec().to_string()).unwrap();
    let (ds, mem) = (root.join("ds"), root.join("mem"));
    ok_json(&["simulate", "--spec", s(&spec_path), "--out", s(&ds)]);
    ok_json(&["lift", "--dataset", s(&ds), "--out", s(&mem)]);
    let skew = root.join("skew.json");
    std::fs::write(&skew, r#"{"R":[1,1,0,0,1,0,0,0,1],"t":[0,0,0]}"#).unwrap();
    let code = run(&["mem", "relocate", "--memory", s(&mem), "--out", s(&root.join("y")), "--all", "--transform", s(&skew)])
        .status
        .code();
    assert_eq!(code, Some(2));
    let cam = root.join("cam.json");
    std::fs::write(&cam, r#"{"fx":-1}"#).unwrap();
    let code = run(&["retrieve", "--memory", s(&mem), "--camera", s(&cam), "--out", s(&root.join("z"))]).status.code();
    assert_eq!(code, Some(2));
}
