//! End-to-end subcommand tests: exit codes, output schemas, and
//! byte-identical output across runs and worker counts.

use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pottslab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn oracle_check_passes_and_exits_zero() {
    let out = run(&[
        "oracle-check",
        "--d",
        "2",
        "--q",
        "3",
        "--p",
        "0.5",
        "--n",
        "2",
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v["boundaries_checked"], 81);
    assert_eq!(v["passed"], true);
}

#[test]
fn oracle_check_reads_boundary_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("boundary.txt");
    std::fs::write(&path, "1\n2\n3\n1\n").unwrap();
    let out = run(&[
        "oracle-check",
        "--d",
        "2",
        "--q",
        "3",
        "--p",
        "0.5",
        "--n",
        "2",
        "--boundary",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v["boundaries_checked"], 1);
    // Marginal vectors emitted as plain JSON arrays.
    assert!(v["exact"].is_array());
    assert!(v["recursive"].is_array());
    assert_eq!(v["exact"].as_array().unwrap().len(), 3);
}

#[test]
fn usage_errors_exit_two() {
    // --p and --critical conflict.
    let out = run(&[
        "exponent",
        "--d",
        "3",
        "--q",
        "3",
        "--p",
        "0.25",
        "--critical",
    ]);
    assert_eq!(out.status.code(), Some(2));
    // Missing weight.
    let out = run(&["exponent", "--d", "3", "--q", "3"]);
    assert_eq!(out.status.code(), Some(2));
    // --critical at q >= d+1 refuses with a pointer to the zero-temperature
    // regime.
    let out = run(&["exponent", "--d", "2", "--q", "3", "--critical"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("zero-temperature"), "stderr: {err}");
}

#[test]
fn budget_env_override_is_honored() {
    let out = bin()
        .args([
            "oracle-check",
            "--d",
            "2",
            "--q",
            "3",
            "--p",
            "0.5",
            "--n",
            "2",
        ])
        .env("POTTSLAB_BUDGET_BOUNDARIES", "10")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn iterate_csv_and_json() {
    let csv = run(&[
        "iterate",
        "--d",
        "3",
        "--q",
        "3",
        "--critical",
        "--N",
        "4",
        "--csv",
    ]);
    assert!(csv.status.success());
    let text = stdout_str(&csv);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,eps,marginal_dev"));
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(1).unwrap().starts_with("1,-9.84375"));

    let json = run(&["iterate", "--d", "3", "--q", "3", "--critical", "--N", "4"]);
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&json)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert_eq!(v[0]["n"], 1);
}

#[test]
fn exponent_report_schema() {
    let out = run(&[
        "exponent",
        "--d",
        "3",
        "--q",
        "3",
        "--critical",
        "--N",
        "20000",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v["regime"], "Critical");
    let names: Vec<&str> = v["estimates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        vec![
            "ratio_even",
            "ratio_odd",
            "probability",
            "regression_exponent_diagnostic"
        ]
    );
}

#[test]
fn rate_hits_target_and_maps_audit_passes() {
    let out = run(&["rate", "--d", "3", "--q", "3", "--p", "0.5", "--N", "400"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    let slope = &v["estimates"][0]["estimate"];
    let err =
        (slope["estimator_value"].as_f64().unwrap() - slope["target"].as_f64().unwrap()).abs();
    assert!(err < 1e-3);

    let out = run(&[
        "maps-audit",
        "--d",
        "3",
        "--q",
        "3",
        "--critical",
        "--points",
        "500",
    ]);
    assert!(out.status.success());
}

#[test]
fn taylor_passes_at_criticality() {
    let out = run(&["taylor", "--d", "4", "--q", "3", "--critical"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v["passed"], true);
    assert!((v["c3"].as_f64().unwrap() + 15.0 / 16.0).abs() < 1e-9);
}

#[test]
fn two_step_bound_passes() {
    let out = run(&[
        "two-step-bound",
        "--d",
        "2",
        "--q",
        "3",
        "--p",
        "0.8",
        "--n",
        "1",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v["prop32_holds"], true);
    assert!(v["argmax_patterns"].is_array());
}

#[test]
fn frozen_search_finds_and_writes_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let bpath = dir.path().join("frozen.txt");
    let out = run(&[
        "frozen-search",
        "--d",
        "3",
        "--q",
        "3",
        "--p",
        "0.01",
        "--n",
        "2",
        "--boundary-out",
        bpath.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v["found"], true);
    assert!(v["margin"].as_f64().unwrap() > 0.0);
    let colors = std::fs::read_to_string(&bpath).unwrap();
    assert_eq!(colors.lines().count(), 9);
}

#[test]
fn byte_identical_outputs_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for (i, workers) in ["1", "4", "1"].iter().enumerate() {
        let path = dir.path().join(format!("out{i}.json"));
        let out = run(&[
            "two-step-bound",
            "--d",
            "2",
            "--q",
            "3",
            "--p",
            "0.5",
            "--n",
            "1",
            "--workers",
            workers,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        bodies.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(
        bodies[0], bodies[1],
        "different worker counts changed the output bytes"
    );
    assert_eq!(
        bodies[0], bodies[2],
        "identical reruns changed the output bytes"
    );
}

#[test]
fn expansion_probe_reports_radius() {
    // Subcritical with radii where the quadratic separation clears the tie
    // tolerance: the identity holds everywhere.
    let out = run(&[
        "expansion-probe",
        "--d",
        "3",
        "--q",
        "3",
        "--p",
        "0.5",
        "--eps-min",
        "1e-4",
        "--points",
        "5",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert!(v["first_failure"].is_null(), "{v}");
    assert_eq!(v["points"].as_array().unwrap().len(), 5);

    // At criticality the ray is never the unique maximizer: failure radius
    // is the smallest probed r.
    let out = run(&[
        "expansion-probe",
        "--d",
        "3",
        "--q",
        "3",
        "--critical",
        "--points",
        "3",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert!(v["first_failure"].is_number());
}

#[test]
fn h_max_reports_patterns() {
    let out = run(&[
        "h-max", "--d", "3", "--q", "3", "--p", "0.5", "--r", "1.0001",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v["ties"], 1);
    // Unique maximizer is the color-2 ray: rows [1, 0].
    assert_eq!(
        v["argmax_patterns"][0],
        serde_json::json!([[1, 0], [1, 0], [1, 0]])
    );
}
