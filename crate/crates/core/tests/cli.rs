use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn uqh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uqh")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn scratch(name: &str, body: &str) -> PathBuf {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn link_unknot_is_modified_dimension() {
    let f = fixture("unknot_half.json");
    let v = stdout_json(&uqh(&["--r", "2", "--json", "link", f.to_str().unwrap()]));
    assert!((v["value"]["re"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    assert!(v["value"]["im"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(v["cut"], 0);
}

#[test]
fn link_kink_rotates_the_phase() {
    let f0 = fixture("unknot_half.json");
    let f1 = fixture("kinked_unknot.json");
    let a = stdout_json(&uqh(&["--r", "3", "--json", "link", f0.to_str().unwrap()]));
    let b = stdout_json(&uqh(&["--r", "3", "--json", "link", f1.to_str().unwrap()]));
    let z0 = (a["value"]["re"].as_f64().unwrap(), a["value"]["im"].as_f64().unwrap());
    let z1 = (b["value"]["re"].as_f64().unwrap(), b["value"]["im"].as_f64().unwrap());
    // θ on V_{1/2} at r = 3: q^{(1/4 − 4)/2}
    let ph = std::f64::consts::PI / 3.0 * (0.25 - 4.0) / 2.0;
    let want = (z0.0 * ph.cos() - z0.1 * ph.sin(), z0.0 * ph.sin() + z0.1 * ph.cos());
    assert!((z1.0 - want.0).abs() < 1e-12 && (z1.1 - want.1).abs() < 1e-12);
}

#[test]
fn link_cut_is_echoed_and_respected() {
    let f = fixture("hopf.json");
    let a = stdout_json(&uqh(&["--r", "3", "--json", "link", f.to_str().unwrap(), "--cut", "1"]));
    let b = stdout_json(&uqh(&["--r", "3", "--json", "link", f.to_str().unwrap(), "--cut", "0"]));
    assert_eq!(a["cut"], 1);
    assert!((a["value"]["re"].as_f64().unwrap() - b["value"]["re"].as_f64().unwrap()).abs() < 1e-10);
    assert!((a["value"]["im"].as_f64().unwrap() - b["value"]["im"].as_f64().unwrap()).abs() < 1e-10);
}

#[test]
fn link_without_projective_component_is_refused() {
    let body = r#"{"components":[{"kind":"S","n":0}],"slices":[
        {"op":"cup","at":0,"kind":"coevR","component":0},{"op":"cap","at":0,"kind":"evL"}]}"#;
    let f = scratch("s0_unknot.json", body);
    let out = uqh(&["--r", "3", "link", f.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("inadmissible"));
}

#[test]
fn eval_closed_unknot_vanishes() {
    let f = fixture("unknot_half.json");
    let v = stdout_json(&uqh(&["--r", "3", "eval", f.to_str().unwrap()]));
    assert!(v["re"].as_f64().unwrap().abs() < 1e-9 && v["im"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn eval_identity_diagram() {
    let body = r#"{"components":[{"kind":"Valpha","alpha":0.5}],
        "inputs":[{"component":0,"sign":"+"}],"slices":[],"outputs":[{"component":0,"sign":"+"}]}"#;
    let f = scratch("identity.json", body);
    let v = stdout_json(&uqh(&["--r", "2", "eval", f.to_str().unwrap()]));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.as_array().unwrap().iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert_eq!(e["re"].as_f64().unwrap(), want);
            assert_eq!(e["im"].as_f64().unwrap(), 0.0);
        }
    }
}

#[test]
fn eval_malformed_slice_names_it() {
    let body = r#"{"components":[{"kind":"Valpha","alpha":0.5}],"slices":[
        {"op":"cup","at":0,"kind":"coevR","component":0},{"op":"cap","at":0}]}"#;
    let f = scratch("malformed.json", body);
    let out = uqh(&["--r", "2", "eval", f.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("slice 1"));
}

#[test]
fn z_two_presentations_of_s3_agree() {
    let a = fixture("s3_unknot.json");
    let b = fixture("s3_kirby.json");
    let za = stdout_json(&uqh(&["--r", "3", "--json", "z", a.to_str().unwrap()]));
    let zb = stdout_json(&uqh(&["--r", "3", "--json", "z", b.to_str().unwrap()]));
    assert_eq!(za["m"], 0);
    assert_eq!(zb["m"], 1);
    assert_eq!(zb["sigma"], 1);
    assert!(zb["terms"].as_u64().unwrap() >= 1);
    for k in ["re", "im"] {
        let d = za["value"][k].as_f64().unwrap() - zb["value"][k].as_f64().unwrap();
        assert!(d.abs() < 1e-8, "{k}: {za} vs {zb}");
    }
}

#[test]
fn z_refuses_r_divisible_by_4() {
    let a = fixture("s3_unknot.json");
    let out = uqh(&["--r", "4", "z", a.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("divisible by 4"));
}

#[test]
fn verify_reports_and_exit_status() {
    let out = uqh(&["--r", "3", "--json", "verify", "relations"]);
    let v = stdout_json(&out);
    assert_eq!(v["suite"], "relations");
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));

    let out = uqh(&["--r", "4", "verify", "invariants"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("skipped: r ∈ 4ℤ"));

    let out = uqh(&["--r", "3", "--tol", "1e-30", "verify", "mtrace"]);
    assert!(!out.status.success());

    let out = uqh(&["--r", "3", "verify", "knots"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reports_are_deterministic() {
    let run = || uqh(&["--r", "3", "--seed", "0x1234", "--json", "verify", "mtrace"]).stdout;
    assert_eq!(run(), run());
}

#[test]
fn missing_r_is_a_usage_error() {
    let out = uqh(&["verify", "relations"]);
    assert_eq!(out.status.code(), Some(2));
}
