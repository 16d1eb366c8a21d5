//! End-to-end smoke tests for the `ctm` binary: each subcommand runs
//! against real files in a temp directory, seeded runs are compared
//! byte for byte, and configuration failures exit with code 2.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ctm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ctm_ok(dir: &Path, args: &[&str]) -> String {
    let out = ctm(dir, args);
    assert!(
        out.status.success(),
        "ctm {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

const TINY_CONFIG: &str = r#"{
  "universe": {"kind": "wellness", "m": 2},
  "reps": 2,
  "grid": [500, 2000],
  "eps": 0.1,
  "delta": 0.1,
  "z": 4,
  "seed": 5
}"#;

#[test]
fn generate_estimate_plan_evaluate_chain_runs() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();

    let stdout = ctm_ok(dir, &["gen-universe", "--m", "2", "--seed", "7", "--out", "u"]);
    assert!(stdout.contains("2 environments"));
    assert!(dir.join("u/universe.json").is_file());
    assert!(dir.join("u/pattern.dot").is_file());

    let stdout = ctm_ok(
        dir,
        &[
            "estimate-structure",
            "--universe",
            "u/universe.json",
            "--samples",
            "20000",
            "--seed",
            "3",
            "--out",
            "s",
        ],
    );
    assert!(stdout.contains("edit distance to the declared graph: 0"));
    assert!(dir.join("s/structure.json").is_file());
    assert!(dir.join("s/estimated.dot").is_file());

    ctm_ok(
        dir,
        &[
            "estimate-bn",
            "--universe",
            "u/universe.json",
            "--samples",
            "50000",
            "--seed",
            "4",
            "--out",
            "b",
        ],
    );
    assert!(dir.join("b/bn.json").is_file());
    assert!(dir.join("b/model.json").is_file());

    let stdout = ctm_ok(
        dir,
        &[
            "estimate-ctm",
            "--universe",
            "u/universe.json",
            "--samples-structure",
            "20000",
            "--samples-bn",
            "100000",
            "--seed",
            "3",
            "--out",
            "c",
        ],
    );
    assert!(stdout.contains("estimated graph: 7 edges"));
    assert!(dir.join("c/model.json").is_file());

    let stdout = ctm_ok(
        dir,
        &[
            "plan",
            "--model",
            "c/model.json",
            "--horizon",
            "3",
            "--goal-feature",
            "0",
            "--goal-value",
            "2",
            "--out",
            "p",
        ],
    );
    assert!(stdout.contains("planned value"));
    assert!(dir.join("p/policy.json").is_file());
    assert!(dir.join("p/value_table.json").is_file());

    let stdout = ctm_ok(
        dir,
        &[
            "evaluate",
            "--model",
            "c/model.json",
            "--policy",
            "p/policy.json",
            "--horizon",
            "3",
            "--goal-feature",
            "0",
            "--goal-value",
            "2",
            "--out",
            "e",
        ],
    );
    // The policy was planned on this very model, so its gap is zero.
    assert!(stdout.contains("gap 0.000000"));
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("e/evaluation.json")).unwrap()).unwrap();
    assert_eq!(eval["suboptimality_gap"], 0.0);
}

#[test]
fn seeded_experiment_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    fs::write(dir.join("tiny.json"), TINY_CONFIG).unwrap();

    for out in ["r1", "r2"] {
        let stdout = ctm_ok(
            dir,
            &["experiment", "structure", "--config", "tiny.json", "--out", out],
        );
        assert!(stdout.contains("structure experiment"));
    }
    for name in ["results.csv", "manifest.json", "universe.json"] {
        let a = fs::read(dir.join("r1").join(name)).unwrap();
        let b = fs::read(dir.join("r2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical seeded runs");
    }
    let csv = fs::read_to_string(dir.join("r1/results.csv")).unwrap();
    assert!(csv.starts_with("experiment,rep,samples,metric,value\n"));
    assert!(csv.contains("structure,mean,"));
}

#[test]
fn experiment_flags_override_the_config() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    fs::write(dir.join("tiny.json"), TINY_CONFIG).unwrap();

    ctm_ok(
        dir,
        &[
            "experiment",
            "structure",
            "--config",
            "tiny.json",
            "--reps",
            "1",
            "--grid",
            "400,900",
            "--jobs",
            "2",
            "--out",
            "r",
        ],
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("r/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["reps"], 1);
    assert_eq!(manifest["grid"], serde_json::json!([400, 900]));
}

#[test]
fn configuration_failures_exit_with_code_2() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();

    // Unreadable config file.
    let out = ctm(dir, &["experiment", "structure", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // Structurally valid JSON that fails validation (empty grid).
    fs::write(
        dir.join("bad.json"),
        r#"{"universe": {"kind": "wellness", "m": 2}, "reps": 1, "grid": [],
            "eps": 0.1, "delta": 0.1, "z": 4, "seed": 0}"#,
    )
    .unwrap();
    let out = ctm(dir, &["experiment", "structure", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));

    // Contradictory reward flags.
    fs::write(dir.join("m.json"), "{}").unwrap();
    let out = ctm(
        dir,
        &[
            "plan",
            "--model",
            "m.json",
            "--horizon",
            "2",
            "--goal-feature",
            "0",
            "--goal-value",
            "1",
            "--reward-table",
            "t.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));

    // Unknown flag is a usage error from the parser.
    let out = ctm(dir, &["gen-universe", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    // Missing budget flags on estimate-ctm.
    fs::write(dir.join("u.json"), "{}").unwrap();
    let out = ctm(dir, &["estimate-ctm", "--universe", "u.json"]);
    assert_eq!(out.status.code(), Some(2));
}
