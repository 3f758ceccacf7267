use std::fs;
use std::process::Command;

use nlform::report::{csv_tables, from_json, to_json};
use nlform::run::{TaskResult, TaskStatus};
use nlform::{builtin, parse_scenario, run, RunOptions, Task};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nlform"));
    c.env_remove("NLFORM_THREADS");
    c
}

const OUT_OF_BOX: &str = r#"
name = "out_of_box"
dimension = 1
tasks = ["sharpness", "concentration"]

[potential]
family = "log_polynomial"
epsilon = 0.7

[kernel]
family = "fractional"
alpha = 1.0

[grid]
radius = 16.0
points_per_axis = 65

[sharpness]
ramp = "inner"
n = [2, 4, 8, 16]
enlarge_grid = false

[concentration]
lambda = [0.5, 1.0]
"#;

#[test]
fn failed_task_is_recorded_and_siblings_survive() {
    let s = parse_scenario(OUT_OF_BOX).unwrap();
    let report = run(&s, &RunOptions::default());
    let sharp = report.task(Task::Sharpness).unwrap();
    assert_eq!(sharp.status, TaskStatus::Failed);
    assert!(sharp.reason.as_deref().unwrap().contains("does not fit"), "{:?}", sharp.reason);
    assert!(sharp.result.is_none());
    let conc = report.task(Task::Concentration).unwrap();
    assert_eq!(conc.status, TaskStatus::Ok);
    assert!(matches!(conc.result, Some(TaskResult::Concentration(_))));
    let json = to_json(&report);
    assert!(json.contains("\"status\": \"failed\""));
    assert!(report.any_failed());
}

#[test]
fn failed_task_gives_nonzero_exit_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("out_of_box.toml");
    fs::write(&cfg, OUT_OF_BOX).unwrap();
    let out = bin().args(["all", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report = from_json(&fs::read_to_string(dir.path().join("out_of_box.json")).unwrap()).unwrap();
    assert_eq!(report.task(Task::Concentration).unwrap().status, TaskStatus::Ok);
}

#[test]
fn negative_finding_exits_zero() {
    let out = bin().args(["sharpness", "--scenario", "threshold_e07"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    match &report.task(Task::Sharpness).unwrap().result {
        Some(TaskResult::Sharpness(s)) => {
            assert_eq!(s.verdict, nlform_core::sharpness::FailureVerdict::Fails)
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, OUT_OF_BOX.replace("alpha = 1.0", "alpha = 2.5")).unwrap();
    let out = bin().args(["all", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kernel.alpha"), "{err}");

    let out = bin().args(["all", "--scenario", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["all", "--scenario", "concentration_linear", "--format", "csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn csv_tables_have_documented_headers_and_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |sub: &str| {
        let out = bin()
            .args(["all", "--scenario", "concentration_linear", "--format", "csv", "--threads", "2", "--out"])
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    };
    run_once("a");
    run_once("b");
    let curve = fs::read_to_string(dir.path().join("a/concentration_linear.moment_curve.csv")).unwrap();
    assert!(curve.starts_with("lambda,value,verdict\n"), "{curve}");
    assert!(curve.contains("\n2,,divergent\n"), "{curve}");
    let tasks = fs::read_to_string(dir.path().join("a/concentration_linear.tasks.csv")).unwrap();
    assert_eq!(tasks, "task,status,reason\nconcentration,ok,\n");
    for table in ["moment_curve", "tasks"] {
        let name = format!("concentration_linear.{table}.csv");
        assert_eq!(fs::read(dir.path().join("a").join(&name)).unwrap(), fs::read(dir.path().join("b").join(&name)).unwrap());
    }
}

#[test]
fn json_round_trips_losslessly() {
    for name in ["tempered_linear", "super_poincare_rate", "concentration_stretched", "threshold_e10"] {
        let s = builtin::builtin(name).unwrap().unwrap();
        let report = run(&s, &RunOptions { seed: 7, timings: false });
        let text = to_json(&report);
        let back = from_json(&text).unwrap();
        assert_eq!(to_json(&back), text, "{name}");
        assert_eq!(back.scenario, s);
    }
}

#[test]
fn sweep_and_slope_tables_are_emitted() {
    let s = builtin::builtin("heavy_tail_dichotomy").unwrap().unwrap();
    let report = run(&s, &RunOptions::default());
    let tables = csv_tables(&report);
    let names: Vec<&str> = tables.iter().map(|t| t.0).collect();
    assert_eq!(names, ["tasks", "stability_sweep", "slope_pairs"]);
    assert!(tables[1].1.starts_with("radius,points_per_axis,best_constant\n8,33,"));
    assert!(tables[2].1.starts_with("n,ratio\n16,"));
}

#[test]
fn beta_borrows_the_gap_constant() {
    let text = builtin::source("super_poincare_rate").unwrap().replace("c0 = 1.0\n", "");
    let s = parse_scenario(&text).unwrap();
    let report = nlform::run_tasks(&s, &[Task::Gap, Task::Beta], &RunOptions::default());
    match &report.task(Task::Beta).unwrap().result {
        Some(TaskResult::Beta(b)) => assert_eq!(b.c0_source, nlform::run::ConstantSource::Gap),
        other => panic!("{other:?}"),
    }
    // Without the gap task there is no constant to use.
    let alone = nlform::run_tasks(&s, &[Task::Beta], &RunOptions::default());
    assert_eq!(alone.task(Task::Beta).unwrap().status, TaskStatus::Failed);
}

#[test]
fn scenario_listing_and_dump() {
    let out = bin().args(["scenario", "list"]).output().unwrap();
    let listed = String::from_utf8(out.stdout).unwrap();
    assert_eq!(listed.lines().collect::<Vec<_>>(), builtin::names().collect::<Vec<_>>());
    let out = bin().args(["scenario", "show", "tempered_linear"]).output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), builtin::source("tempered_linear").unwrap());
    let out = bin().args(["dump-form", "--scenario", "concentration_linear"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# form matrix (upper triangle)\n0 0 "));
    assert_eq!(text.lines().filter(|l| l.starts_with('#')).count(), 3);
}

#[test]
fn timings_are_opt_in() {
    let out = bin().args(["concentration", "--scenario", "concentration_linear"]).output().unwrap();
    assert!(!String::from_utf8(out.stdout).unwrap().contains("\"timings\""));
    let out = bin().args(["concentration", "--scenario", "concentration_linear", "--timings"]).output().unwrap();
    let report = from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert!(report.timings.unwrap().contains_key("concentration"));
}
