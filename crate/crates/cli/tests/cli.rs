use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbf"))
        .args(args)
        .env_remove("SOLVER_TRACE_EVERY")
        .output()
        .expect("binary runs")
}

fn shipped_lasso() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems/lasso.json")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn lasso_with(edit: impl Fn(&mut Value), dir: &Path) -> PathBuf {
    let mut v = read_json(&shipped_lasso());
    edit(&mut v);
    let path = dir.join("problem.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn shipped_lasso_solves_to_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbf(&["solve", shipped_lasso().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sol = read_json(&dir.path().join("solution.json"));
    let x: Vec<f64> = serde_json::from_value(sol["xbar"][0].clone()).unwrap();
    let oracle = fbf_core::demos::lasso_oracle(0.0);
    let err = x.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-6, "max error {err}");
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["status"], "converged");
    for key in ["iterations", "displacement", "transversality_defect", "beta", "gamma", "wall_time_s"] {
        assert!(!summary[key].is_null(), "summary lacks {key}");
    }
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with(fbf_core::solver::TRACE_HEADER));
}

#[test]
fn oversized_step_exits_1_before_iterating() {
    let dir = tempfile::tempdir().unwrap();
    let file = lasso_with(|v| v["solver"]["gamma"] = 10.0.into(), dir.path());
    let out = dir.path().join("out");
    let o = fbf(&["solve", file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("step-bound error: gamma = 10"), "{}", stderr(&o));
    assert!(!out.join("trace.csv").exists());
}

#[test]
fn iteration_cap_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let file = lasso_with(|v| v["solver"]["max_iter"] = 1.into(), dir.path());
    let out = dir.path().join("out");
    let o = fbf(&["solve", file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(read_json(&out.join("summary.json"))["status"], "max_iter");
}

#[test]
fn schema_errors_name_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let file = lasso_with(|v| v["solver"]["tolerance"] = 1.0.into(), dir.path());
    let o = fbf(&["solve", file.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/solver"), "{}", stderr(&o));
}

#[test]
fn trace_cadence_follows_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fbf"))
        .args(["solve", shipped_lasso().to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .env("SOLVER_TRACE_EVERY", "25")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let rows: Vec<&str> = trace.lines().skip(1).collect();
    let iterations = read_json(&dir.path().join("summary.json"))["iterations"].as_u64().unwrap() as usize;
    assert_eq!(rows.len(), iterations.div_ceil(25) + usize::from(!(iterations - 1).is_multiple_of(25)));
    assert!(rows[1].starts_with("25,"));
}

#[test]
fn every_demo_passes() {
    for name in fbf_core::demos::DEMOS {
        let dir = tempfile::tempdir().unwrap();
        let o = fbf(&["demo", name, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
        let report = read_json(&dir.path().join("demo_report.json"));
        assert_eq!(report["passed"], true, "{name}");
        assert!(dir.path().join("problem.json").exists());
        if *name == "deblur" {
            for img in ["truth.pgm", "observed.pgm", "restored.pgm"] {
                assert!(dir.path().join(img).exists(), "{img}");
            }
            assert!(read_json(&dir.path().join("summary.json"))["iterations"].as_u64().unwrap() <= 20_000);
        }
        if *name == "separation" {
            assert_eq!(report["verdict"], "identical");
        }
    }
}

#[test]
fn demo_problem_files_round_trip_through_solve() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    assert_eq!(fbf(&["demo", "qp", "--out", a.to_str().unwrap()]).status.code(), Some(0));
    let b = dir.path().join("b");
    let o = fbf(&["solve", a.join("problem.json").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.join("solution.json")).unwrap(),
        std::fs::read(b.join("solution.json")).unwrap()
    );
}

#[test]
fn check_battery_passes_and_is_deterministic() {
    let first = fbf(&["check"]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stdout));
    let second = fbf(&["check"]);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn corrupted_adjoint_fails_the_battery() {
    let o = fbf(&["check", "--corrupt-adjoint"]);
    assert_eq!(o.status.code(), Some(1));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().any(|l| l.starts_with("FAIL") && l.contains("adjoint")), "{out}");
}

#[test]
fn unknown_demo_is_a_usage_error() {
    let o = fbf(&["demo", "nope", "--out", "/tmp/unused"]);
    assert_ne!(o.status.code(), Some(0));
}
