use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn bearings(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bearings")).args(args).output().unwrap()
}

fn run(sub: &str, scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    bearings(&args)
}

fn write_doc(dir: &Path, name: &str, doc: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(doc).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn check<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap()
}

fn two_ball_case_ii() -> Value {
    json!({
        "system": "spherical",
        "seed": 4,
        "run": { "t_final_s": 20.0 },
        "spherical": {
            "configuration": "II",
            "fixed_radius_m": 2.0,
            "ball_radius_m": 0.4,
            "sphere_inertia_kg_m2": [1.0, 1.5, 2.0],
            "balls": [{ "mass_kg": 1.0 }, { "mass_kg": 0.5 }]
        },
        "checks": ["integrals"]
    })
}

#[test]
fn case_three_linear_integral_is_conserved() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("simulate-spherical", &scenario("case3_eps_minus_one.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("report.json"));
    let f3 = check(&report, "F3");
    assert!(f3["measured"].as_f64().unwrap() < 1e-7);
    assert_eq!(f3["threshold"], json!(1e-7));
    assert_eq!(report["passed"], json!(true));
}

#[test]
fn planar_quadrature_matches_direct_integration() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("compare-quadrature", &scenario("planar_quadrature.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("report.json"));
    assert!(check(&report, "quadrature-compare")["measured"].as_f64().unwrap() < 1e-6);
    assert_eq!(report["quadrature"]["available"], json!(true));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# bearings-trajectory v1"));
    assert!(lines.next().unwrap().starts_with("t,v_phi,n_1,n_2,a,theta,a_quadrature"));
    assert_eq!(lines.count(), 401);
}

#[test]
fn case_two_with_large_balls_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = two_ball_case_ii();
    doc["spherical"]["ball_radius_m"] = json!(1.0);
    let path = write_doc(dir.path(), "bad.json", &doc);
    let out = run("simulate-spherical", &path, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("case II requires"), "{stderr}");
    assert!(!dir.path().join("out/report.json").exists());
}

#[test]
fn parse_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ \"system\": ").unwrap();
    assert_eq!(run("simulate-planar", &broken, dir.path(), &[]).status.code(), Some(2));

    let mut doc = two_ball_case_ii();
    doc["spherical"]["radius_m"] = json!(1.0);
    let unknown = write_doc(dir.path(), "unknown.json", &doc);
    assert_eq!(run("simulate-spherical", &unknown, dir.path(), &[]).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    assert_eq!(run("simulate-spherical", &missing, dir.path(), &[]).status.code(), Some(2));
    assert_eq!(bearings(&["simulate-spherical"]).status.code(), Some(2));
}

#[test]
fn failed_checks_exit_with_five() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = two_ball_case_ii();
    doc["thresholds"] = json!({ "integral_drift": 1e-20 });
    let path = write_doc(dir.path(), "strict.json", &doc);
    let out = run("check-invariants", &path, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(5));
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(report["passed"], json!(false));
}

#[test]
fn third_integral_check_needs_an_integrable_case() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = two_ball_case_ii();
    doc["checks"] = json!(["F3"]);
    let path = write_doc(dir.path(), "f3.json", &doc);
    assert_eq!(run("simulate-spherical", &path, dir.path(), &[]).status.code(), Some(3));
}

#[test]
fn wrong_system_for_command_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("compare-quadrature", &scenario("case3_eps_minus_one.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn reports_are_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_doc(dir.path(), "random.json", &two_ball_case_ii());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert_eq!(run("check-invariants", &path, out, &["--seed", "21"]).status.code(), Some(0));
    }
    let ra = fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("report.json")).unwrap());
    assert_eq!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());
    let report: Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["seed"], json!(21));
    assert_eq!(report["initial_state_source"], json!("random"));

    let c = dir.path().join("c");
    run("check-invariants", &path, &c, &["--seed", "22"]);
    assert_ne!(ra, fs::read(c.join("report.json")).unwrap());
}

#[test]
fn epsilon_sweep_finds_integrals_only_at_plus_and_minus_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("sweep", &scenario("ansatz_epsilon_sweep.json"), dir.path(), &["--workers", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let agg = read_json(&dir.path().join("report.json"));
    let points = agg["points"].as_array().unwrap();
    assert_eq!(points.len(), 4);
    for p in points {
        let eps = p["values"][0].as_f64().unwrap();
        let idx = p["index"].as_u64().unwrap();
        let report = read_json(&dir.path().join(format!("points/{idx:04}/report.json")));
        let dim = report["ansatz"]["nullspace_dimension"].as_u64().unwrap();
        assert_eq!(dim > 0, eps.abs() == 1.0, "epsilon {eps}: nullspace dimension {dim}");
        assert_eq!(check(&report, "ansatz")["pass"], json!(true));
    }
}

#[test]
fn one_point_sweep_equals_a_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = two_ball_case_ii();
    let path = write_doc(dir.path(), "single.json", &doc);
    doc["sweep"] = json!({
        "command": "check-invariants",
        "axes": [{ "pointer": "/spherical/fixed_radius_m", "values": [2.0] }]
    });
    let sweep_path = write_doc(dir.path(), "sweep.json", &doc);
    assert_eq!(run("check-invariants", &path, &dir.path().join("run"), &[]).status.code(), Some(0));
    assert_eq!(run("sweep", &sweep_path, &dir.path().join("sweep"), &[]).status.code(), Some(0));
    assert_eq!(
        fs::read(dir.path().join("run/report.json")).unwrap(),
        fs::read(dir.path().join("sweep/points/0000/report.json")).unwrap()
    );
}

#[test]
fn tolerance_sweep_reduces_drift_monotonically() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("sweep", &scenario("tolerance_sweep.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let agg = read_json(&dir.path().join("report.json"));
    let drifts: Vec<f64> =
        agg["points"].as_array().unwrap().iter().map(|p| p["worst_drift"].as_f64().unwrap()).collect();
    assert_eq!(drifts.len(), 4);
    assert!(drifts.windows(2).all(|w| w[1] < w[0]), "{drifts:?}");
}

#[test]
fn sweep_exit_code_is_the_worst_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = two_ball_case_ii();
    doc["sweep"] = json!({
        "command": "simulate-spherical",
        "axes": [{ "pointer": "/spherical/ball_radius_m", "values": [0.3, 1.2] }]
    });
    let path = write_doc(dir.path(), "sweep.json", &doc);
    let out = run("sweep", &path, dir.path(), &["--workers", "2"]);
    assert_eq!(out.status.code(), Some(3));
    let agg = read_json(&dir.path().join("report.json"));
    assert_eq!(agg["exit_code"], json!(3));
    assert_eq!(agg["points"][0]["exit_code"], json!(0));
    assert_eq!(agg["points"][1]["exit_code"], json!(3));
    assert!(agg["points"][1]["error"].as_str().unwrap().contains("case II requires"));
}

#[test]
fn flags_override_run_controls() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        "simulate-planar",
        &scenario("planar_quadrature.json"),
        dir.path(),
        &["--t-final", "5", "--samples", "11", "--tol", "1e-9"],
    );
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["run"]["t_final_s"], json!(5.0));
    assert_eq!(report["run"]["samples"], json!(11));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.lines().nth(1).unwrap().ends_with("f1,f2,f3,f4,mu"));
    assert!(dir.path().join("timing.json").exists());
}

#[test]
fn quadrature_falls_back_to_direct_integration_when_k_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({
        "system": "planar",
        "planar": {
            "plane_mass_kg": 1.0, "plane_inertia_kg_m2": 1.0, "ball_radius_m": 0.3,
            "balls": [{ "mass_kg": 1.0 }, { "mass_kg": 1.0 }],
            "initial": { "v_x_m_per_s": 0.0, "v_y_m_per_s": 0.0, "v_phi_rad_per_s": 0.0,
                         "contacts_m": [[0.5, 0.0], [-0.2, 0.3]] }
        }
    });
    let path = write_doc(dir.path(), "rest.json", &doc);
    let out = run("compare-quadrature", &path, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(report["quadrature"]["available"], json!(false));
    assert_eq!(report["warnings"].as_array().unwrap().len(), 1);
    assert!(report["checks"].as_array().unwrap().is_empty());
}
