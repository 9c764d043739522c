//! End-to-end tests of the `treehedge` binary against the shipped fixtures.

use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> (serde_json::Value, i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_treehedge"))
        .args(args)
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    let value = serde_json::from_str(stdout.trim()).unwrap_or(serde_json::Value::Null);
    (value, out.status.code().unwrap_or(-1), stderr)
}

#[test]
fn price_trinomial_call_cvar09() {
    let path = fixture("trinomial-call-cvar09.json");
    let (v, code, _) = run(&["price", path.to_str().unwrap()]);
    assert_eq!(code, 0, "report: {v}");
    assert_eq!(v["status"], "ok");
    let phi = v["phi"].as_f64().unwrap();
    let psi = v["psi"].as_f64().unwrap();
    assert!((phi - 10.0).abs() < 1e-7, "phi {phi}");
    assert!((psi - 200.0 / 27.0).abs() < 1e-6, "psi {psi}");
    assert!(v["tolerances"]["martingale_tol"].as_f64().is_some());
    assert!(v["iterations"]["relaxed"].as_u64().is_some());
}

#[test]
fn price_constant_claim() {
    let path = fixture("constant-claim.json");
    let (v, code, _) = run(&["price", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    let phi = v["phi"].as_f64().unwrap();
    let psi = v["psi"].as_f64().unwrap();
    assert!((phi - 3.0).abs() < 1e-9);
    assert!((psi - 3.0).abs() < 1e-9);
}

#[test]
fn verify_trinomial_all_invariants_pass() {
    let path = fixture("trinomial-call-cvar09.json");
    let (v, code, _) = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(code, 0, "report: {v}");
    assert_eq!(v["status"], "ok");
    let gap = v["gap"].as_f64().unwrap();
    assert!(gap.abs() <= 1e-6, "gap {gap}");
    let invariants = v["invariants"].as_array().unwrap();
    assert!(!invariants.is_empty());
    assert!(invariants.iter().all(|c| c["pass"].as_bool().unwrap()));
}

#[test]
fn verify_strict_cone_pure_lp_duality() {
    let path = fixture("strict-cone-trinomial.json");
    let (v, code, _) = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    let gap = v["gap"].as_f64().unwrap();
    assert!(gap.abs() <= 1e-7, "gap {gap}");
}

#[test]
fn nonviable_fixture_exits_2() {
    let path = fixture("nonviable-binomial-cvar08.json");
    let (v, code, _) = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(code, 2, "report: {v}");
    assert_eq!(v["status"], "nonviable");
    let (v2, code2, _) = run(&["price", path.to_str().unwrap()]);
    assert_eq!(code2, 2);
    assert_eq!(v2["status"], "nonviable");
}

#[test]
fn risk_uniform_quartet() {
    let path = fixture("risk-uniform-cvar05.json");
    let (v, code, _) = run(&["risk", path.to_str().unwrap()]);
    assert_eq!(code, 0, "report: {v}");
    let robust = v["robust_oce"].as_f64().unwrap();
    assert!((robust + 1.5).abs() < 1e-8, "robust {robust}");
    let dual = v["dual_oce"].as_f64().unwrap();
    assert!((dual - robust).abs() < 1e-6);
    // Q = P has penalty zero under the cvar conjugate.
    assert!(v["penalty_q"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn arity_mismatch_is_a_field_diagnostic() {
    let path = fixture("measure-arity-mismatch.json");
    let (_, code, stderr) = run(&["price", path.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(stderr.contains("measures[0].transitions"), "stderr: {stderr}");
}

#[test]
fn batch_mode_emits_ndjson_and_worst_code() {
    let ok = fixture("trinomial-call-cvar09.json");
    let bad = fixture("nonviable-binomial-cvar08.json");
    let (_, code, _) = run(&[
        "price",
        ok.to_str().unwrap(),
        bad.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn floor_flag_produces_floored_price() {
    let path = fixture("trinomial-call-cvar09.json");
    let (v, code, _) = run(&["price", path.to_str().unwrap(), "--floor-c", "1000"]);
    assert_eq!(code, 0);
    let psi = v["psi"].as_f64().unwrap();
    let psi_c = v["psi_c"].as_f64().unwrap();
    assert!((psi - psi_c).abs() < 1e-7, "slack floor must not change the price");
}

#[test]
fn oracle_vertices_trinomial_segment() {
    let path = fixture("strict-cone-trinomial.json");
    let (v, code, _) = run(&["oracle", "vertices", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(v["count"].as_u64().unwrap(), 2);
}

#[test]
fn round_trip_is_byte_identical() {
    for name in [
        "trinomial-call-cvar09.json",
        "constant-claim.json",
        "nonviable-binomial-cvar08.json",
        "strict-cone-trinomial.json",
        "risk-uniform-cvar05.json",
    ] {
        let path = fixture(name);
        let text = std::fs::read_to_string(&path).unwrap();
        let dto = treehedge_cli::instance::parse(&text).unwrap();
        let round = treehedge_cli::instance::canonical_json(&dto);
        assert_eq!(text, round, "{name} is not canonical");
    }
}
