use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gridbed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridbed")).args(args).env_remove("GRIDBED_OUT").output().expect("spawn gridbed")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn run_into(dir: &Path, scenario: &str, extra: &[&str]) -> Output {
    let mut args = vec!["run", scenario, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = gridbed(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

#[test]
fn bundled_scenarios_validate() {
    for name in ["fig4_peakshave", "wastage_office"] {
        let o = gridbed(&["validate", &format!("bundled:{name}")]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok:"));
    }
}

#[test]
fn missing_unit_names_the_field_path() {
    let o = gridbed(&["validate", "bundled:fig4_peakshave", "--set", "appliances.3.unit=nowhere"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("appliances[3].unit"), "{err}");
    assert!(err.contains("nowhere"), "{err}");
}

#[test]
fn negative_threshold_is_rejected() {
    let o = gridbed(&["validate", "bundled:fig4_peakshave", "--set", "drm.threshold_kw=-5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("threshold_kw must be > 0"), "{}", stderr(&o));
}

#[test]
fn unknown_fields_are_hard_errors() {
    for set in ["colour=blue", "drm.gain=2", "units.0.floor=3"] {
        let o = gridbed(&["validate", "bundled:fig4_peakshave", "--set", set]);
        assert_eq!(o.status.code(), Some(1), "{set}");
        assert!(stderr(&o).contains("unknown field"), "{set}: {}", stderr(&o));
    }
}

#[test]
fn parse_errors_carry_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{\n  \"name\": \"x\",\n  \"seed\": ,\n}\n").unwrap();
    let o = gridbed(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn io_failure_is_a_runtime_error() {
    let o = gridbed(&["validate", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = gridbed(&["validate", "bundled:no_such_fixture"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fig4_peakshave"));
}

#[test]
fn threshold_override_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    for thr in ["33", "35.5"] {
        let out = dir.path().join(thr);
        run_into(&out, "bundled:fig4_peakshave", &["--set", &format!("drm.threshold_kw={thr}")]);
        let want: f64 = thr.parse().unwrap();
        let r = read_json(&out.join("report.json"));
        assert_eq!(r["threshold_kw"].as_f64(), Some(want));
        assert_eq!(r["impairment"]["threshold_kw"].as_f64(), Some(want));
        let csv = fs::read_to_string(out.join("demand.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("at_ms,controlled_kw,uncontrolled_kw,base_kw,threshold_kw"));
        assert!(lines.all(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() == want));
    }
}

#[test]
fn report_of_trace_matches_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    run_into(&run_dir, "bundled:fig4_peakshave", &[]);
    let again = dir.path().join("again");
    let o = gridbed(&["report", run_dir.join("trace.jsonl").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.json", "demand.csv"] {
        assert_eq!(fs::read(run_dir.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    assert!(!again.join("trace.jsonl").exists());
}

#[test]
fn report_defaults_to_the_trace_directory() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), "bundled:fig4_peakshave", &[]);
    let before = fs::read(dir.path().join("report.json")).unwrap();
    fs::remove_file(dir.path().join("report.json")).unwrap();
    let o = gridbed(&["report", dir.path().join("trace.jsonl").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("report.json")).unwrap(), before);
}

#[test]
fn empty_and_cut_traces_are_truncated() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = gridbed(&["report", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("truncated trace"), "{}", stderr(&o));

    let run_dir = dir.path().join("run");
    run_into(&run_dir, "bundled:fig4_peakshave", &[]);
    let full = fs::read_to_string(run_dir.join("trace.jsonl")).unwrap();
    let lines: Vec<&str> = full.lines().collect();
    let cut = dir.path().join("cut.jsonl");
    fs::write(&cut, lines[..lines.len() / 2].join("\n")).unwrap();
    let o = gridbed(&["report", cut.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("truncated trace"));
}

#[test]
fn out_env_takes_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("from-env");
    let flag_dir = dir.path().join("from-flag");
    let o = Command::new(env!("CARGO_BIN_EXE_gridbed"))
        .args(["run", "bundled:fig4_peakshave", "--out", flag_dir.to_str().unwrap()])
        .env("GRIDBED_OUT", &env_dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_dir.join("trace.jsonl").exists());
    assert!(!flag_dir.exists());
}

#[test]
fn wastage_office_reports_campus_total() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), "bundled:wastage_office", &[]);
    let r = read_json(&dir.path().join("report.json"));
    assert_eq!(r["wastage"]["campus"]["total_kwh"].as_f64(), Some(47_680.2));
    assert_eq!(r["schema_version"], 1);
    let csv = fs::read_to_string(dir.path().join("wastage.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(r["scheduler"]["exact"]["objective_sgd"].as_f64().unwrap() > 0.0);
}

#[test]
fn no_excursions_means_zero_time_above() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), "bundled:fig4_peakshave", &["--set", "drm.threshold_kw=1000"]);
    let r = read_json(&dir.path().join("report.json"));
    let imp = &r["impairment"];
    assert_eq!(imp["controlled"]["time_above_threshold_s"].as_f64(), Some(0.0));
    assert_eq!(imp["uncontrolled"]["time_above_threshold_s"].as_f64(), Some(0.0));
    assert_eq!(imp["commands_sent"], 0);
}

#[test]
fn seed_flag_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let hash = |sub: &str, extra: &[&str]| {
        let o = run_into(&dir.path().join(sub), "bundled:fig4_peakshave", extra);
        String::from_utf8(o.stdout).unwrap().lines().next().unwrap().to_string()
    };
    let a = hash("a", &[]);
    assert_eq!(a, hash("b", &[]));
    assert_ne!(a, hash("c", &["--seed", "43"]));
    let header = fs::read_to_string(dir.path().join("c/trace.jsonl")).unwrap();
    let first: Value = serde_json::from_str(header.lines().next().unwrap()).unwrap();
    assert_eq!(first["record"], "header");
    assert_eq!(first["schema_version"], 1);
    assert_eq!(first["scenario"]["seed"], 43);
}
