//! Config-driven experiments: ingest, tessellate, split, forecast every
//! origin, score, and report.

mod config;
mod report;
mod run;
mod synth;

use std::path::Path;

use thiserror::Error;

use crate::bridge::BridgeError;
use crate::flows::FlowError;
use crate::forecast::ForecastError;
use crate::ingest::IngestError;
use crate::metrics::MetricError;
use crate::tessellation::TessellationError;

pub use config::{
    DatasetConfig, EvaluationConfig, EvaluationMode, ExperimentConfig, MetricName, OutputConfig, PostprocessConfig,
    PublishedClaim, PublishedRow, TessellationConfig, TimeAxisConfig,
};
pub use report::{
    assemble_report, read_report, render_csv, render_markdown, write_report, ClaimCheck, DataProvenance,
    EvaluationReport, MacroMetrics, ModelLog, Provenance, RelativeChange, ReportPaths, ReportRow, RowSource,
    CLAIM_TOLERANCE_PP,
};
pub use run::{
    actual_window, evaluate_model, evaluation_window, load_tessellation, prepare, run_experiment, run_experiment_with,
    score, ModelRun, Prepared,
};
pub use synth::{
    generate_synthetic_city, write_synthetic_city, SeasonalPattern, SyntheticCity, SyntheticFiles, SyntheticSpec,
    SYNTH_ORIGIN_TIME,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Tessellation(#[from] TessellationError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("model {model}, series {series}: {source}")]
    Forecast { model: String, series: String, source: ForecastError },
    #[error("model {model}, origin {origin}: {source}")]
    Adapter { model: String, origin: String, source: BridgeError },
    #[error("model {model}: {source}")]
    Metric { model: String, source: MetricError },
    #[error("report error: {0}")]
    Report(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub(crate) fn forecast(model: &str, series: &str, source: ForecastError) -> Self {
        HarnessError::Forecast { model: model.to_string(), series: series.to_string(), source }
    }

    pub(crate) fn adapter(model: &str, origin: &str, source: BridgeError) -> Self {
        HarnessError::Adapter { model: model.to_string(), origin: origin.to_string(), source }
    }

    /// Short stable identifier of the error kind, for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Ingest(_) => "ingest",
            HarnessError::Tessellation(_) => "tessellation",
            HarnessError::Flow(_) => "flow",
            HarnessError::Forecast { .. } => "forecast",
            HarnessError::Adapter { .. } => "adapter",
            HarnessError::Metric { .. } => "metric",
            HarnessError::Report(_) => "report",
        }
    }
}
