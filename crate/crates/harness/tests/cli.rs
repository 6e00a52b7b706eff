//! End-to-end tests of the command-line interface: exit codes, written
//! report files, determinism, and the seed/thread knobs.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_homspace")
}

fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).expect("file written");
}

/// A scenario whose checks all pass on a plain line.
fn passing_scenario(name: &str) -> String {
    format!(
        r#"{{
            "name": "{name}",
            "space": {{ "kind": "grid1d", "n": 12 }},
            "checks": [
                {{ "name": "space-valid" }},
                {{ "name": "doubling" }},
                {{ "name": "dyadic-single" }},
                {{ "name": "quasitriangle-exact", "expect_pass": false }}
            ]
        }}"#
    )
}

/// A four-point line in the on-disk space format.
fn line_space_json() -> String {
    let n = 4;
    let mut dist = Vec::new();
    for i in 0..n {
        for j in 0..n {
            dist.push(((i as i64 - j as i64).abs() as f64).to_string());
        }
    }
    format!(
        r#"{{ "points": ["a", "b", "c", "d"], "dist": [{}], "mass": [1, 1, 1, 1] }}"#,
        dist.join(", ")
    )
}

#[test]
fn run_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("line.json");
    write(&scenario, &passing_scenario("line"));
    let out_dir = dir.path().join("out");

    let out = run_cli(
        &["run", scenario.to_str().unwrap(), "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("line.json")).unwrap())
            .unwrap();
    assert_eq!(report["all_met"], serde_json::Value::Bool(true));
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);

    let csv = std::fs::read_to_string(out_dir.join("line.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "header plus one line per check");
    assert!(csv.starts_with("name,measured,bound,slack,pass,"));
}

#[test]
fn run_exits_one_when_an_expectation_is_missed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.json");
    // A plain grid is not a snowflake, so expecting the exact constant
    // check to pass is a missed expectation.
    write(
        &scenario,
        r#"{
            "name": "bad",
            "space": { "kind": "grid1d", "n": 8 },
            "checks": [ { "name": "quasitriangle-exact" } ]
        }"#,
    );
    let out = run_cli(&["run", scenario.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[FAIL]"), "stdout: {stdout}");
}

#[test]
fn run_rejects_malformed_input_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("broken.json");
    write(&scenario, r#"{ "name": "broken" }"#);
    let out = run_cli(&["run", scenario.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("nope.json");
    let out = run_cli(&["run", missing.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diag_prints_structure_json() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("space.json");
    write(&space, &line_space_json());
    let out = run_cli(&["diag", space.to_str().unwrap()], &[]);
    assert!(out.status.success());
    let st: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(st["n"], serde_json::json!(4));
    assert_eq!(st["a0"], serde_json::json!(1.0));
    assert!(st["a1"].as_f64().unwrap() >= 1.0);
}

#[test]
fn dyadic_verifies_single_and_adjacent_systems() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("space.json");
    write(&space, &line_space_json());

    let out = run_cli(&["dyadic", space.to_str().unwrap()], &[]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let payload: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(payload["ok"], serde_json::Value::Bool(true));
    assert!(payload["report"]["dydbl_ok"].as_bool().unwrap());

    let out = run_cli(
        &["dyadic", space.to_str().unwrap(), "--adjacent", "2", "--delta", "0.01"],
        &[],
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let payload: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(payload["ok"], serde_json::Value::Bool(true));
    assert_eq!(payload["delta"], serde_json::json!(0.01));
    assert_eq!(payload["systems"].as_array().unwrap().len(), 2);
}

#[test]
fn verify_all_exits_by_worst_scenario() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("a.json"), &passing_scenario("a"));
    write(&dir.path().join("b.json"), &passing_scenario("b"));
    let out = run_cli(&["verify-all", dir.path().to_str().unwrap()], &[("HOMSPACE_THREADS", "1")]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    write(
        &dir.path().join("c.json"),
        r#"{
            "name": "c",
            "space": { "kind": "grid1d", "n": 8 },
            "checks": [ { "name": "quasitriangle-exact" } ]
        }"#,
    );
    let out = run_cli(&["verify-all", dir.path().to_str().unwrap()], &[("HOMSPACE_THREADS", "1")]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("failed: quasitriangle-exact"), "stdout: {stdout}");
}

#[test]
fn json_reports_are_deterministic_modulo_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("det.json");
    write(
        &scenario,
        r#"{
            "name": "det",
            "space": { "kind": "random_doubling", "n": 24, "dim": 2, "seed": 9 },
            "cz_instances": 25,
            "checks": [
                { "name": "space-valid" },
                { "name": "doubling" },
                { "name": "dyadic-single" },
                { "name": "cz-random" },
                { "name": "covering" }
            ]
        }"#,
    );
    let mut payloads = Vec::new();
    for sub in ["one", "two"] {
        let out_dir = dir.path().join(sub);
        let out = run_cli(
            &["run", scenario.to_str().unwrap(), "--out", out_dir.to_str().unwrap()],
            &[],
        );
        assert!(out.status.success());
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("det.json")).unwrap())
                .unwrap();
        v.as_object_mut().unwrap().remove("runtime");
        payloads.push(serde_json::to_string(&v).unwrap());
    }
    assert_eq!(payloads[0], payloads[1]);
}

#[test]
fn seed_flag_overrides_the_random_generator() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("cloud.json");
    write(
        &scenario,
        r#"{
            "name": "cloud",
            "space": { "kind": "random_doubling", "n": 16, "dim": 2, "seed": 1 },
            "checks": [ { "name": "space-valid" } ]
        }"#,
    );
    let hash_of = |args: &[&str]| -> String {
        let out_dir = tempfile::tempdir().unwrap();
        let mut full = vec!["run", scenario.to_str().unwrap(), "--out"];
        full.push(out_dir.path().to_str().unwrap());
        full.extend_from_slice(args);
        let out = run_cli(&full, &[]);
        assert!(out.status.success());
        let v: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(out_dir.path().join("cloud.json")).unwrap(),
        )
        .unwrap();
        v["space_sha256"].as_str().unwrap().to_string()
    };
    let base = hash_of(&[]);
    let seeded = hash_of(&["--seed", "7"]);
    let seeded_again = hash_of(&["--seed", "7"]);
    assert_ne!(base, seeded);
    assert_eq!(seeded, seeded_again);
}

#[test]
fn format_flag_controls_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("fmt.json");
    write(&scenario, &passing_scenario("fmt"));
    let out_dir = dir.path().join("out");
    let out = run_cli(
        &[
            "run",
            scenario.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--format",
            "csv",
        ],
        &[],
    );
    assert!(out.status.success());
    assert!(out_dir.join("fmt.csv").exists());
    assert!(!out_dir.join("fmt.json").exists());

    let out = run_cli(
        &["run", scenario.to_str().unwrap(), "--format", "yaml"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}
