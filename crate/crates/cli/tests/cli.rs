use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn odflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odflow")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str::<Value>(line).expect("error line is JSON")["error"].clone()
}

fn synth(dir: &Path) -> Value {
    let out = odflow(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--tiles",
        "4",
        "--days",
        "3",
        "--test-days",
        "1",
        "--model",
        r#"{"kind": "ma", "window": 2}"#,
        "--model",
        r#"{"kind": "persistence"}"#,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    stdout_json(&out)
}

#[test]
fn synth_then_run_then_rerender() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = synth(tmp.path());
    assert_eq!(summary["tiles"], 4);
    assert_eq!(summary["intervals"], 72);
    let config = summary["config"].as_str().unwrap().to_string();

    let out = odflow(&["run", &config]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("MA(2)") && table.contains("Persistence"), "{table}");
    let report_dir = tmp.path().join("report");
    for file in ["report.csv", "report.md", "report.json"] {
        assert!(report_dir.join(file).is_file(), "missing {file}");
    }
    let csv = std::fs::read_to_string(report_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("model,source,rmse_od,mae_od,cpc,rmse_flows,rel_rmse_od,rel_mae_od,rel_cpc\n"));
    assert_eq!(csv.lines().count(), 3);

    let again = tmp.path().join("again");
    let out = odflow(&["report", report_dir.join("report.json").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(again.join("report.csv")).unwrap(), csv);
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path())["config"].as_str().unwrap().to_string();
    let (seq, par) = (tmp.path().join("seq"), tmp.path().join("par"));
    assert!(odflow(&["run", &config, "--sequential", "--out", seq.to_str().unwrap()]).status.success());
    assert!(odflow(&["run", &config, "--workers", "3", "--out", par.to_str().unwrap()]).status.success());
    let read = |d: &Path| std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(read(&seq), read(&par));
}

#[test]
fn validate_tess_reports_clean_grids_and_flags_overlaps() {
    let out = odflow(&["validate-tess", "--bbox", "0,0,1,1", "--cell", "0.25"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["tiles"], 16);
    assert_eq!(v["clean"], true);

    let tmp = tempfile::tempdir().unwrap();
    let square = |id: &str, x0: f64| {
        format!(
            r#"{{"type": "Feature", "properties": {{"id": "{id}"}}, "geometry": {{"type": "Polygon", "coordinates": [[[{x0}, 0], [{x1}, 0], [{x1}, 1], [{x0}, 1], [{x0}, 0]]]}}}}"#,
            x1 = x0 + 1.0
        )
    };
    let geojson = format!(r#"{{"type": "FeatureCollection", "features": [{}, {}]}}"#, square("a", 0.0), square("b", 0.5));
    let path = tmp.path().join("tiles.geojson");
    std::fs::write(&path, geojson).unwrap();
    let out = odflow(&["validate-tess", "--geojson", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["clean"], false);
    assert_eq!(stderr_error(&out)["kind"], "validation");
}

#[test]
fn failures_exit_nonzero_with_a_json_error_line() {
    let out = odflow(&["run", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error(&out)["kind"], "io");

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"name": "x", "modelz": []}"#).unwrap();
    let out = odflow(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error(&out)["kind"], "config");

    let out = odflow(&["synth", "--out", tmp.path().to_str().unwrap(), "--interval", "7000"]);
    assert_eq!(stderr_error(&out)["kind"], "config");

    let out = odflow(&["synth", "--out", tmp.path().to_str().unwrap(), "--model", "not json"]);
    let err = stderr_error(&out);
    assert_eq!(err["kind"], "config");
    assert!(err["message"].as_str().unwrap().contains("--model"));
}

#[test]
fn usage_errors_come_from_the_argument_parser() {
    let out = odflow(&["validate-tess", "--cell", "0.5"]);
    assert!(!out.status.success());
    assert!(odflow(&["frobnicate"]).status.code() != Some(0));
}
