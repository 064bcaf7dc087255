use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::forecast::ModelSpec;
use crate::ingest::{parse_timestamp, OdCountColumns, TimeAxis, TrajectoryColumns, TripColumns};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Trips {
        path: PathBuf,
        #[serde(default)]
        columns: TripColumns,
    },
    Trajectories {
        path: PathBuf,
        #[serde(default)]
        columns: TrajectoryColumns,
    },
    OdCounts {
        path: PathBuf,
        #[serde(default)]
        columns: OdCountColumns,
    },
}

impl DatasetConfig {
    pub fn path(&self) -> &Path {
        match self {
            DatasetConfig::Trips { path, .. }
            | DatasetConfig::Trajectories { path, .. }
            | DatasetConfig::OdCounts { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TessellationConfig {
    Grid { min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64, cell_size: f64 },
    Geojson { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeAxisConfig {
    /// Start of the first interval: epoch seconds or an RFC 3339 / naive UTC timestamp.
    pub origin: String,
    pub interval_seconds: u32,
    pub num_intervals: usize,
}

impl TimeAxisConfig {
    pub fn resolve(&self) -> Result<TimeAxis, HarnessError> {
        let origin = parse_timestamp(&self.origin, 0).map_err(|e| HarnessError::Config(format!("time_axis.origin: {e}")))?;
        TimeAxis::new(origin, self.interval_seconds, self.num_intervals).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// One step ahead at every test interval, with the true history revealed as it goes.
    #[default]
    Rolling,
    /// A single `horizon`-step forecast from the split point.
    FixedHorizon,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub mode: EvaluationMode,
    /// Steps forecast in fixed-horizon mode; defaults to the whole test window.
    pub horizon: Option<usize>,
    /// Trailing vectors handed to the model; defaults to the full available history.
    pub context_length: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub clamp_nonnegative: bool,
    pub round_to_integer: bool,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { clamp_nonnegative: true, round_to_integer: false }
    }
}

/// Metrics copied from a publication, shown next to the computed rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishedRow {
    pub model: String,
    pub rmse: f64,
    pub mae: f64,
    pub cpc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Rmse,
    Mae,
    Cpc,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Rmse => "rmse",
            MetricName::Mae => "mae",
            MetricName::Cpc => "cpc",
        }
    }
}

/// A stated percentage change of `model` over the baseline row, checked against recomputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishedClaim {
    pub model: String,
    pub metric: MetricName,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default = "default_stem")]
    pub stem: String,
}

fn default_stem() -> String {
    "report".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub dataset: DatasetConfig,
    pub tessellation: TessellationConfig,
    pub time_axis: TimeAxisConfig,
    /// First instant of the test window.
    pub split: String,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub postprocess: PostprocessConfig,
    #[serde(default)]
    pub include_self_loops: bool,
    /// Label of the row that relative changes are computed against.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default)]
    pub published_rows: Vec<PublishedRow>,
    #[serde(default)]
    pub published_claims: Vec<PublishedClaim>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Directory that relative paths resolve against; set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn split_instant(&self) -> Result<i64, HarnessError> {
        parse_timestamp(&self.split, 0).map_err(|e| HarnessError::Config(format!("split: {e}")))
    }

    /// Labels of the configured models, in order.
    pub fn model_labels(&self) -> Vec<String> {
        self.models.iter().map(ModelSpec::label).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        for m in &self.models {
            m.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        let labels = self.model_labels();
        for (k, l) in labels.iter().enumerate() {
            if labels[..k].contains(l) || self.published_rows.iter().any(|r| &r.model == l) {
                return bad(format!("duplicate model label {l:?}"));
            }
        }
        if self.evaluation.context_length == Some(0) {
            return bad("evaluation.context_length must be at least 1".into());
        }
        if self.evaluation.horizon == Some(0) {
            return bad("evaluation.horizon must be at least 1".into());
        }
        if self.evaluation.horizon.is_some() && self.evaluation.mode == EvaluationMode::Rolling {
            return bad("evaluation.horizon only applies to fixed_horizon mode".into());
        }
        let axis = self.time_axis.resolve()?;
        let split = self.split_instant()?;
        if split <= axis.origin_time || split >= axis.end_time() {
            return bad(format!("split {split} is not strictly inside the time axis"));
        }
        if let Some(b) = &self.baseline {
            if !labels.contains(b) && !self.published_rows.iter().any(|r| &r.model == b) {
                return bad(format!("baseline {b:?} is not a configured or published row"));
            }
        } else if !self.published_claims.is_empty() {
            return bad("published_claims need a baseline".into());
        }
        Ok(())
    }
}
