use std::path::Path;

use super::config::{DatasetConfig, EvaluationConfig, EvaluationMode, ExperimentConfig, PostprocessConfig, TessellationConfig};
use super::report::{assemble_report, DataProvenance, EvaluationReport, MacroMetrics, ModelLog, Provenance, ReportRow, RowSource};
use super::HarnessError;
use crate::bridge::{handshake, AdapterConfig, AdapterSession};
use crate::exec::{map_chunks_with, map_indexed, Execution};
use crate::flows::{build_od_tensor, build_od_tensor_from_counts, flow_sums, split_train_test, ODTensor};
use crate::forecast::{forecast_native, postprocess, ForecastRequest, ForecastResponse, ModelSpec};
use crate::ingest::{parse_od_counts, parse_trajectories, parse_trips, trajectory_to_trips, TripRecord};
use crate::metrics::{cpc, mae, rmse, PredictionPair};
use crate::tessellation::{build_square_grid, load_polygon_tessellation, BBox, Tessellation};

/// Everything a model run needs: the tessellation, the full tensor and the split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tessellation: Tessellation,
    pub tensor: ODTensor,
    pub train_len: usize,
    pub data: DataProvenance,
}

fn read(cfg: &ExperimentConfig, path: &Path) -> Result<String, HarnessError> {
    let full = cfg.resolve(path);
    std::fs::read_to_string(&full).map_err(|e| HarnessError::io(&full, e))
}

pub fn load_tessellation(cfg: &ExperimentConfig) -> Result<Tessellation, HarnessError> {
    match &cfg.tessellation {
        TessellationConfig::Grid { min_lon, min_lat, max_lon, max_lat, cell_size } => {
            let region = BBox::new(*min_lon, *min_lat, *max_lon, *max_lat)?;
            Ok(build_square_grid(region, *cell_size)?)
        }
        TessellationConfig::Geojson { path } => Ok(load_polygon_tessellation(&read(cfg, path)?)?),
    }
}

/// Ingests the dataset into a tensor and locates the split.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    let tessellation = load_tessellation(cfg)?;
    let axis = cfg.time_axis.resolve()?;
    let mut data = DataProvenance { tiles: tessellation.len(), ..DataProvenance::default() };
    let text = read(cfg, cfg.dataset.path())?;

    let from_trips = |trips: &[TripRecord], data: &mut DataProvenance| -> Result<ODTensor, HarnessError> {
        let built = build_od_tensor(trips, &tessellation, axis)?;
        data.records_processed = built.skips.processed;
        data.unlocated = built.skips.unlocated;
        data.out_of_axis = built.skips.out_of_axis;
        Ok(built.tensor)
    };
    let tensor = match &cfg.dataset {
        DatasetConfig::Trips { columns, .. } => {
            let parsed = parse_trips(&text, columns)?;
            data.rows_rejected = parsed.rejects.len() as u64;
            from_trips(&parsed.records, &mut data)?
        }
        DatasetConfig::Trajectories { columns, .. } => {
            let parsed = parse_trajectories(&text, columns)?;
            data.rows_rejected = parsed.rejects.len() as u64;
            let trips: Vec<TripRecord> = parsed.records.iter().flat_map(|t| trajectory_to_trips(t, &tessellation)).collect();
            from_trips(&trips, &mut data)?
        }
        DatasetConfig::OdCounts { columns, .. } => {
            let parsed = parse_od_counts(&text, columns, &axis)?;
            data.rows_rejected = parsed.rejects.len() as u64;
            data.records_processed = parsed.records.len() as u64;
            build_od_tensor_from_counts(&parsed.records, &tessellation, axis)?
        }
    };
    let (train, test) = split_train_test(&tensor, cfg.split_instant()?)?;
    data.train_intervals = train.intervals();
    data.test_intervals = test.intervals();
    Ok(Prepared { tessellation, tensor, train_len: train.intervals(), data })
}

/// Forecasts of one model over the evaluation window.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub label: String,
    /// First evaluated interval and number of evaluated intervals.
    pub window: (usize, usize),
    /// `window.1 x n x n`, row-major, after postprocessing.
    pub predicted: Vec<f64>,
    pub forecast_calls: u64,
    pub zero_skipped: u64,
    pub adapter: Option<String>,
}

/// Intervals scored under `eval`: `(first, count)`.
pub fn evaluation_window(prepared: &Prepared, eval: &EvaluationConfig) -> Result<(usize, usize), HarnessError> {
    let test_len = prepared.tensor.intervals() - prepared.train_len;
    let count = match eval.mode {
        EvaluationMode::Rolling => test_len,
        EvaluationMode::FixedHorizon => {
            let c = eval.horizon.unwrap_or(test_len);
            if c == 0 || c > test_len {
                return Err(HarnessError::Config(format!("horizon {c} does not fit the {test_len}-interval test window")));
            }
            c
        }
    };
    Ok((prepared.train_len, count))
}

/// One forecast call: the context ends just before `first`, and `horizon`
/// vectors are predicted from there.
struct Call {
    first: usize,
    request: ForecastRequest,
}

struct OriginResult {
    /// `window.1` vectors of length n.
    rows: Vec<Vec<f64>>,
    calls: u64,
    skipped: u64,
}

fn origin_calls(prepared: &Prepared, eval: &EvaluationConfig, window: (usize, usize), origin: usize) -> Vec<Call> {
    let tensor = &prepared.tensor;
    let context = eval.context_length.unwrap_or(usize::MAX);
    let label = prepared.tessellation.label(origin);
    let make = |first: usize, horizon: usize| {
        let start = first.saturating_sub(context);
        let history = (start..first).map(|tau| tensor.row(tau, origin).iter().map(|&c| c as f64).collect()).collect();
        Call {
            first,
            request: ForecastRequest::new(format!("{label}@{first}"), history, horizon, tensor.axis().interval_seconds),
        }
    };
    match eval.mode {
        EvaluationMode::Rolling => (window.0..window.0 + window.1).map(|tau| make(tau, 1)).collect(),
        EvaluationMode::FixedHorizon => vec![make(window.0, window.1)],
    }
}

fn is_zero(req: &ForecastRequest) -> bool {
    req.history.iter().flatten().all(|&v| v == 0.0)
}

/// Runs `forecast` on every call whose context is not all zero and lays the
/// postprocessed forecasts out over the window.
fn run_origin<F>(
    calls: Vec<Call>,
    n: usize,
    window: (usize, usize),
    post: PostprocessConfig,
    forecast: F,
) -> Result<OriginResult, HarnessError>
where
    F: FnOnce(&[ForecastRequest]) -> Result<Vec<ForecastResponse>, HarnessError>,
{
    let mut rows = vec![vec![0.0; n]; window.1];
    let (live, zero): (Vec<Call>, Vec<Call>) = calls.into_iter().partition(|c| !is_zero(&c.request));
    let requests: Vec<ForecastRequest> = live.iter().map(|c| c.request.clone()).collect();
    let responses = if requests.is_empty() { Vec::new() } else { forecast(&requests)? };
    for (call, resp) in live.iter().zip(responses) {
        let resp = postprocess(resp, post.clamp_nonnegative, post.round_to_integer);
        for (h, v) in resp.forecast.into_iter().enumerate() {
            rows[call.first - window.0 + h] = v;
        }
    }
    Ok(OriginResult { rows, calls: live.len() as u64, skipped: zero.len() as u64 })
}

/// Forecasts every origin with one model and assembles the predicted matrices.
pub fn evaluate_model(
    spec: &ModelSpec,
    prepared: &Prepared,
    eval: &EvaluationConfig,
    post: PostprocessConfig,
    exec: Execution,
) -> Result<ModelRun, HarnessError> {
    let label = spec.label();
    let n = prepared.tessellation.len();
    let window = evaluation_window(prepared, eval)?;

    let (results, adapter) = if let Some(adapter_cfg) = AdapterConfig::from_spec(spec) {
        let pool = exec.workers().clamp(1, n.max(1));
        let mut sessions: Vec<AdapterSession> = (0..pool)
            .map(|_| handshake(&adapter_cfg).map_err(|e| HarnessError::adapter(&label, "handshake", e)))
            .collect::<Result<_, _>>()?;
        let name = sessions[0].name().to_string();
        let results = map_chunks_with(exec, &mut sessions, n, |session, range| {
            range
                .map(|i| {
                    run_origin(origin_calls(prepared, eval, window, i), n, window, post, |reqs| {
                        session
                            .forecast_batch(reqs)
                            .map_err(|e| HarnessError::adapter(&label, prepared.tessellation.label(i), e))
                    })
                })
                .collect()
        });
        for s in &mut sessions {
            s.shutdown();
        }
        (results, Some(name))
    } else {
        let results = map_indexed(exec, n, |i| {
            run_origin(origin_calls(prepared, eval, window, i), n, window, post, |reqs| {
                reqs.iter()
                    .map(|r| forecast_native(spec, r).map_err(|e| HarnessError::forecast(&label, &r.series_id, e)))
                    .collect()
            })
        });
        (results, None)
    };

    let mut predicted = vec![0.0; window.1 * n * n];
    let (mut calls, mut skipped) = (0, 0);
    for (i, r) in results.into_iter().enumerate() {
        let r = r?;
        calls += r.calls;
        skipped += r.skipped;
        for (k, row) in r.rows.iter().enumerate() {
            let at = (k * n + i) * n;
            predicted[at..at + n].copy_from_slice(row);
        }
    }
    Ok(ModelRun { label, window, predicted, forecast_calls: calls, zero_skipped: skipped, adapter })
}

/// Observed counts over `window`, laid out like [`ModelRun::predicted`].
pub fn actual_window(prepared: &Prepared, window: (usize, usize)) -> Vec<f64> {
    let nn = prepared.tensor.tiles() * prepared.tensor.tiles();
    prepared.tensor.as_slice()[window.0 * nn..(window.0 + window.1) * nn].iter().map(|&c| c as f64).collect()
}

/// Micro-averaged OD metrics, per-interval averages, and RMSE on in/out flows.
pub fn score(
    label: &str,
    predicted: &[f64],
    actual: &[f64],
    n: usize,
    include_self_loops: bool,
) -> Result<ReportRow, HarnessError> {
    let metric_err = |e| HarnessError::Metric { model: label.to_string(), source: e };
    let pair = PredictionPair::new(predicted, actual).map_err(metric_err)?;
    let nn = n * n;
    let intervals = predicted.len() / nn;
    let mut per = MacroMetrics { rmse_od: 0.0, mae_od: 0.0, cpc: 0.0 };
    for k in 0..intervals {
        let (p, a) = (&predicted[k * nn..(k + 1) * nn], &actual[k * nn..(k + 1) * nn]);
        let pair = PredictionPair::new(p, a).map_err(metric_err)?;
        per.rmse_od += rmse(&pair);
        per.mae_od += mae(&pair);
        per.cpc += cpc(p, a).map_err(metric_err)?;
    }
    per.rmse_od /= intervals as f64;
    per.mae_od /= intervals as f64;
    per.cpc /= intervals as f64;

    let (p_in, p_out) = flow_sums(predicted, n, include_self_loops);
    let (a_in, a_out) = flow_sums(actual, n, include_self_loops);
    let p_flows: Vec<f64> = p_in.into_iter().chain(p_out).collect();
    let a_flows: Vec<f64> = a_in.into_iter().chain(a_out).collect();
    // Clamped predictions keep flows non-negative; unclamped ones may not, which rmse tolerates.
    let flow_pair = PredictionPair::new(&p_flows, &a_flows).map_err(metric_err)?;

    Ok(ReportRow {
        model: label.to_string(),
        source: RowSource::Computed,
        rmse_od: rmse(&pair),
        mae_od: mae(&pair),
        cpc: cpc(predicted, actual).map_err(metric_err)?,
        rmse_flows: Some(rmse(&flow_pair)),
        per_interval: Some(per),
    })
}

fn describe_evaluation(cfg: &ExperimentConfig, window: (usize, usize)) -> String {
    let context = cfg.evaluation.context_length.map_or_else(|| "full history".to_string(), |l| format!("last {l} intervals"));
    let mode = match cfg.evaluation.mode {
        EvaluationMode::Rolling => "rolling one-step".to_string(),
        EvaluationMode::FixedHorizon => format!("fixed horizon of {} steps", window.1),
    };
    let post = cfg.postprocess;
    format!(
        "{mode}, context {context}, clamp {}, round {}, self loops in flows {}",
        post.clamp_nonnegative, post.round_to_integer, cfg.include_self_loops
    )
}

/// Runs every configured model and builds the report, with parallelism from the environment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvaluationReport, HarnessError> {
    run_experiment_with(cfg, Execution::from_env(cfg.workers))
}

pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Execution) -> Result<EvaluationReport, HarnessError> {
    let prepared = prepare(cfg)?;
    let n = prepared.tessellation.len();
    let window = evaluation_window(&prepared, &cfg.evaluation)?;
    let actual = actual_window(&prepared, window);

    let mut rows = Vec::with_capacity(cfg.models.len());
    let mut logs = Vec::with_capacity(cfg.models.len());
    for spec in &cfg.models {
        let run = evaluate_model(spec, &prepared, &cfg.evaluation, cfg.postprocess, exec)?;
        rows.push(score(&run.label, &run.predicted, &actual, n, cfg.include_self_loops)?);
        logs.push(ModelLog {
            model: run.label,
            spec: spec.clone(),
            forecast_calls: run.forecast_calls,
            zero_skipped: run.zero_skipped,
            adapter: run.adapter,
        });
    }
    let provenance = Provenance {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: cfg.digest(),
        evaluation: describe_evaluation(cfg, window),
        data: prepared.data,
        models: logs,
    };
    assemble_report(
        &cfg.name,
        rows,
        &cfg.published_rows,
        cfg.baseline.as_deref(),
        &cfg.published_claims,
        Some(provenance),
    )
}
