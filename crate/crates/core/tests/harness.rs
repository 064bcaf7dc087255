use std::path::Path;

use odflow::exec::Execution;
use odflow::forecast::{forecast_ma, ForecastRequest};
use odflow::harness::{
    evaluate_model, prepare, render_csv, render_markdown, run_experiment_with, EvaluationConfig, EvaluationMode,
    ExperimentConfig, HarnessError, PostprocessConfig,
};
use tempfile::TempDir;

const T0: i64 = 1_704_067_200;
const HOUR: i64 = 3600;

/// Four tiles on the unit square, 12 hourly intervals, split after 8.
fn config_json(dataset: &str, models: &str, extra: &str) -> String {
    format!(
        r#"{{
            "name": "toy",
            "dataset": {dataset},
            "tessellation": {{"kind": "grid", "min_lon": 0, "min_lat": 0, "max_lon": 1, "max_lat": 1, "cell_size": 0.5}},
            "time_axis": {{"origin": "2024-01-01T00:00:00Z", "interval_seconds": 3600, "num_intervals": 12}},
            "split": "2024-01-01T08:00:00Z",
            "models": {models}{extra}
        }}"#
    )
}

/// OD counts where `count(tau, i, j)` comes from `f`; tile 3 never sends anything.
fn od_counts(dir: &Path, f: impl Fn(usize, usize, usize) -> u64) {
    let mut body = String::from("interval_start,origin_id,destination_id,count\n");
    for tau in 0..12 {
        for i in 0..3 {
            for j in 0..4 {
                let c = f(tau, i, j);
                if c > 0 {
                    body.push_str(&format!("{},{i},{j},{c}\n", T0 + tau as i64 * HOUR));
                }
            }
        }
    }
    std::fs::write(dir.join("od.csv"), body).unwrap();
}

fn setup(models: &str, extra: &str, f: impl Fn(usize, usize, usize) -> u64) -> (TempDir, ExperimentConfig) {
    let dir = tempfile::tempdir().unwrap();
    od_counts(dir.path(), f);
    let json = config_json(r#"{"format": "od_counts", "path": "od.csv"}"#, models, extra);
    let cfg = ExperimentConfig::from_json(&json, dir.path()).unwrap();
    (dir, cfg)
}

fn wavy(tau: usize, i: usize, j: usize) -> u64 {
    ((tau * 7 + i * 3 + j * 5) % 6) as u64
}

#[test]
fn persistence_is_exact_on_a_constant_tensor() {
    let (_dir, cfg) = setup(r#"[{"kind": "persistence"}, {"kind": "ma", "window": 2}]"#, "", |_, i, j| (i + 2 * j) as u64);
    let report = run_experiment_with(&cfg, Execution::Sequential).unwrap();
    for model in ["Persistence", "MA(2)"] {
        let row = report.row(model).unwrap();
        assert_eq!(row.rmse_od, 0.0, "{model}");
        assert_eq!(row.mae_od, 0.0, "{model}");
        assert_eq!(row.cpc, 1.0, "{model}");
        assert_eq!(row.rmse_flows, Some(0.0), "{model}");
    }
}

#[test]
fn an_empty_model_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    od_counts(dir.path(), wavy);
    let json = config_json(r#"{"format": "od_counts", "path": "od.csv"}"#, "[]", "");
    let cfg = ExperimentConfig::from_json(&json, dir.path()).unwrap();
    let err = run_experiment_with(&cfg, Execution::Sequential).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)), "{err}");
    assert_eq!(err.kind(), "config");
}

#[test]
fn a_missing_dataset_is_an_io_error() {
    let json = config_json(r#"{"format": "trips", "path": "absent.csv"}"#, r#"[{"kind": "persistence"}]"#, "");
    let cfg = ExperimentConfig::from_json(&json, "/nonexistent").unwrap();
    assert_eq!(run_experiment_with(&cfg, Execution::Sequential).unwrap_err().kind(), "io");
}

#[test]
fn rolling_calls_skip_silent_origins() {
    let (_dir, cfg) = setup(r#"[{"kind": "ma", "window": 3}]"#, "", wavy);
    let prepared = prepare(&cfg).unwrap();
    assert_eq!(prepared.train_len, 8);
    let run = evaluate_model(&cfg.models[0], &prepared, &cfg.evaluation, cfg.postprocess, Execution::Sequential).unwrap();
    // Three live origins times four test intervals; tile 3 is all zero throughout.
    assert_eq!(run.forecast_calls, 12);
    assert_eq!(run.zero_skipped, 4);
    assert_eq!(run.window, (8, 4));
    assert_eq!(run.predicted.len(), 4 * 16);
}

#[test]
fn assembled_matrices_match_per_origin_forecasts() {
    let (_dir, cfg) = setup(r#"[{"kind": "ma", "window": 3}]"#, "", wavy);
    let prepared = prepare(&cfg).unwrap();
    let run = evaluate_model(&cfg.models[0], &prepared, &cfg.evaluation, cfg.postprocess, Execution::Sequential).unwrap();
    for tau in 8..12 {
        for i in 0..4 {
            let history: Vec<Vec<f64>> = (0..tau).map(|s| (0..4).map(|j| wavy(s, i, j) as f64 * f64::from(u8::from(i < 3))).collect()).collect();
            let expected = forecast_ma(&ForecastRequest::new("x", history, 1, 3600), 3).unwrap().forecast.remove(0);
            let at = ((tau - 8) * 4 + i) * 4;
            assert_eq!(&run.predicted[at..at + 4], &expected[..], "interval {tau}, origin {i}");
        }
    }
}

#[test]
fn fixed_horizon_makes_one_call_per_origin() {
    let (_dir, cfg) = setup(r#"[{"kind": "ma", "window": 2}]"#, r#", "evaluation": {"mode": "fixed_horizon", "horizon": 3}"#, wavy);
    let prepared = prepare(&cfg).unwrap();
    let run = evaluate_model(&cfg.models[0], &prepared, &cfg.evaluation, cfg.postprocess, Execution::Sequential).unwrap();
    assert_eq!(run.window, (8, 3));
    assert_eq!((run.forecast_calls, run.zero_skipped), (3, 1));

    let too_long = EvaluationConfig { mode: EvaluationMode::FixedHorizon, horizon: Some(5), context_length: None };
    assert!(evaluate_model(&cfg.models[0], &prepared, &too_long, PostprocessConfig::default(), Execution::Sequential).is_err());
}

#[test]
fn context_length_limits_the_history() {
    // With a one-interval context, MA of any window reduces to persistence.
    let (_dir, cfg) = setup(r#"[{"kind": "ma", "window": 5}, {"kind": "persistence"}]"#, r#", "evaluation": {"context_length": 1}"#, wavy);
    let report = run_experiment_with(&cfg, Execution::Sequential).unwrap();
    let (ma, pers) = (report.row("MA(5)").unwrap(), report.row("Persistence").unwrap());
    assert_eq!(ma.rmse_od, pers.rmse_od);
    assert_eq!(ma.cpc, pers.cpc);
}

#[test]
fn reports_are_byte_identical_across_runs_and_execution_modes() {
    let models = r#"[{"kind": "ma", "window": 3}, {"kind": "var", "max_lag": 1}, {"kind": "persistence"}]"#;
    let (_dir, cfg) = setup(models, r#", "baseline": "MA(3)""#, wavy);
    let a = run_experiment_with(&cfg, Execution::Sequential).unwrap();
    let b = run_experiment_with(&cfg, Execution::Sequential).unwrap();
    let c = run_experiment_with(&cfg, Execution::Parallel { workers: 3 }).unwrap();
    assert_eq!(render_csv(&a), render_csv(&b));
    assert_eq!(render_csv(&a), render_csv(&c));
    assert_eq!(render_markdown(&a), render_markdown(&c));
    assert_eq!(a.rows, c.rows);
}

#[test]
fn trips_and_trajectories_reach_the_same_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let centre = |tile: usize| (0.25 + 0.5 * (tile % 2) as f64, 0.25 + 0.5 * (tile / 2) as f64);
    // One entity hops 0 -> 1 -> 3 -> 2 -> 0 ... one tile per hour.
    let path = [0, 1, 3, 2];
    let mut traj = String::from("entity_id,timestamp,lon,lat\n");
    let mut trips = String::from("start_time,end_time,origin_lon,origin_lat,destination_lon,destination_lat\n");
    for k in 0..12 {
        let (lon, lat) = centre(path[k % 4]);
        traj.push_str(&format!("car,{},{lon},{lat}\n", T0 + k as i64 * HOUR + 60));
        if k + 1 < 12 {
            let (lon2, lat2) = centre(path[(k + 1) % 4]);
            let t = T0 + k as i64 * HOUR + 60;
            trips.push_str(&format!("{t},{},{lon},{lat},{lon2},{lat2}\n", t + HOUR));
        }
    }
    std::fs::write(dir.path().join("traj.csv"), traj).unwrap();
    std::fs::write(dir.path().join("trips.csv"), trips).unwrap();
    let models = r#"[{"kind": "persistence"}]"#;
    let from_traj = ExperimentConfig::from_json(&config_json(r#"{"format": "trajectories", "path": "traj.csv"}"#, models, ""), dir.path()).unwrap();
    let from_trips = ExperimentConfig::from_json(&config_json(r#"{"format": "trips", "path": "trips.csv"}"#, models, ""), dir.path()).unwrap();
    let a = prepare(&from_traj).unwrap();
    let b = prepare(&from_trips).unwrap();
    assert_eq!(a.tensor, b.tensor);
    assert_eq!(a.tensor.total(), 11);
    assert_eq!(a.tensor.get(0, 0, 1), 1);
    assert_eq!(a.tensor.get(1, 1, 3), 1);
}

fn od_counts_config(body: String) -> (TempDir, ExperimentConfig) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("od.csv"), body).unwrap();
    let json = config_json(r#"{"format": "od_counts", "path": "od.csv"}"#, r#"[{"kind": "persistence"}]"#, "");
    let cfg = ExperimentConfig::from_json(&json, dir.path()).unwrap();
    (dir, cfg)
}

#[test]
fn od_count_rows_outside_the_axis_are_rejected() {
    let (_dir, cfg) = od_counts_config(format!(
        "interval_start,origin_id,destination_id,count\n{},0,1,4\n{},0,1,9\n",
        T0 + HOUR,
        T0 + 40 * HOUR
    ));
    let p = prepare(&cfg).unwrap();
    assert_eq!(p.tensor.total(), 4);
    assert_eq!(p.data.rows_rejected, 1);
}

#[test]
fn unknown_tile_ids_fail_the_run() {
    let (_dir, cfg) = od_counts_config(format!("interval_start,origin_id,destination_id,count\n{T0},7,1,2\n"));
    let err = prepare(&cfg).unwrap_err();
    assert_eq!(err.kind(), "flow");
    assert!(err.to_string().contains('7'), "{err}");
}
