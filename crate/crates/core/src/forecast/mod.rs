//! The uniform forecaster contract and the native baseline models.
//!
//! Every model maps a [`ForecastRequest`] (a multivariate history plus a
//! horizon) to a [`ForecastResponse`] with exactly `horizon` vectors of the
//! history's dimension. Native models are pure functions of the request, so
//! independent series can be forecast concurrently.

mod arima;
pub(crate) mod lstsq;
mod ma;
mod var;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arima::forecast_arima;
pub use lstsq::RIDGE_PENALTY;
pub use ma::{forecast_ma, forecast_persistence, forecast_seasonal_naive};
pub use var::{forecast_var, VarOptions};

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("invalid request for {series}: {reason}")]
    InvalidRequest { series: String, reason: String },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("series {series}: need at least {needed} history vectors, got {got}")]
    InsufficientHistory { series: String, needed: usize, got: usize },
    #[error("series {series}: singular normal equations ({detail})")]
    Singular { series: String, detail: String },
    #[error(
        "series {series}: rank-deficient design (rank {rank} of {columns} columns); \
         set allow_ridge to fall back to a ridge penalty"
    )]
    RankDeficient { series: String, rank: usize, columns: usize },
    #[error("series {series}: model produced non-finite forecasts")]
    NonFinite { series: String },
    #[error("external models must be run through an adapter session")]
    ExternalModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRequest {
    pub series_id: String,
    pub history: Vec<Vec<f64>>,
    pub horizon: usize,
    pub interval_seconds: u32,
}

impl ForecastRequest {
    pub fn new(series_id: impl Into<String>, history: Vec<Vec<f64>>, horizon: usize, interval_seconds: u32) -> Self {
        Self { series_id: series_id.into(), history, horizon, interval_seconds }
    }

    /// Dimension of the history vectors (0 for an empty history).
    pub fn dim(&self) -> usize {
        self.history.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |reason: &str| ForecastError::InvalidRequest { series: self.series_id.clone(), reason: reason.into() };
        if self.history.is_empty() {
            return Err(bad("history is empty"));
        }
        let d = self.dim();
        if d == 0 {
            return Err(bad("history vectors have dimension 0"));
        }
        if self.history.iter().any(|v| v.len() != d) {
            return Err(bad("history vectors differ in dimension"));
        }
        if self.history.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("history contains non-finite values"));
        }
        if self.horizon == 0 {
            return Err(bad("horizon must be at least 1"));
        }
        if self.interval_seconds == 0 {
            return Err(bad("interval_seconds must be positive"));
        }
        Ok(())
    }

    /// One dimension of the history as a flat series.
    pub(crate) fn column(&self, dim: usize) -> Vec<f64> {
        self.history.iter().map(|v| v[dim]).collect()
    }

    pub(crate) fn is_constant(&self) -> bool {
        let first = &self.history[0];
        self.history.iter().all(|v| v == first)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResponse {
    pub series_id: String,
    pub forecast: Vec<Vec<f64>>,
    /// Fitted parameters, keyed by name (e.g. `dim0.ar`, `lag1`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub coefficients: BTreeMap<String, Vec<f64>>,
}

impl ForecastResponse {
    pub(crate) fn new(series_id: &str, forecast: Vec<Vec<f64>>) -> Self {
        Self { series_id: series_id.to_string(), forecast, coefficients: BTreeMap::new() }
    }

    /// Checks horizon, dimension and finiteness against the originating request.
    pub fn check_against(&self, req: &ForecastRequest) -> Result<(), String> {
        if self.forecast.len() != req.horizon {
            return Err(format!("expected {} forecast steps, got {}", req.horizon, self.forecast.len()));
        }
        let d = req.dim();
        if let Some(v) = self.forecast.iter().find(|v| v.len() != d) {
            return Err(format!("expected vectors of dimension {d}, got {}", v.len()));
        }
        if self.forecast.iter().flatten().any(|v| !v.is_finite()) {
            return Err("forecast contains non-finite values".into());
        }
        Ok(())
    }
}

fn default_window() -> usize {
    3
}
fn default_p() -> usize {
    2
}
fn default_d() -> usize {
    1
}
fn default_q() -> usize {
    2
}
fn default_max_lag() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_handshake_timeout() -> f64 {
    30.0
}
fn default_request_timeout() -> f64 {
    60.0
}
fn default_in_flight() -> usize {
    1
}

/// Model selection plus its parameters. Omitted orders take documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Ma {
        #[serde(default = "default_window")]
        window: usize,
    },
    Arima {
        #[serde(default = "default_p")]
        p: usize,
        #[serde(default = "default_d")]
        d: usize,
        #[serde(default = "default_q")]
        q: usize,
        #[serde(default)]
        allow_ridge: bool,
    },
    Var {
        #[serde(default = "default_max_lag")]
        max_lag: usize,
        #[serde(default = "default_true")]
        select_order: bool,
        #[serde(default)]
        allow_ridge: bool,
    },
    Persistence,
    External {
        command: Vec<String>,
        #[serde(default = "default_handshake_timeout")]
        handshake_timeout_secs: f64,
        #[serde(default = "default_request_timeout")]
        request_timeout_secs: f64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |m: &str| Err(ForecastError::InvalidSpec(m.to_string()));
        match *self {
            ModelSpec::Ma { window: 0 } => bad("MA window must be at least 1"),
            ModelSpec::Arima { p, d, q, .. } if p + q == 0 && d == 0 => bad("ARIMA needs p + q >= 1 or d >= 1"),
            ModelSpec::Var { max_lag: 0, .. } => bad("VAR max lag must be at least 1"),
            ModelSpec::External { ref command, handshake_timeout_secs, request_timeout_secs, max_in_flight } => {
                if command.is_empty() || command[0].is_empty() {
                    bad("external command is empty")
                } else if !(handshake_timeout_secs > 0.0 && request_timeout_secs > 0.0) {
                    bad("adapter timeouts must be positive")
                } else if max_in_flight == 0 {
                    bad("max_in_flight must be at least 1")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Short human-readable label, e.g. `ARIMA(2,1,2)`.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Ma { window } => format!("MA({window})"),
            ModelSpec::Arima { p, d, q, .. } => format!("ARIMA({p},{d},{q})"),
            ModelSpec::Var { max_lag, select_order, .. } => {
                if *select_order {
                    format!("VAR(<={max_lag},AIC)")
                } else {
                    format!("VAR({max_lag})")
                }
            }
            ModelSpec::Persistence => "Persistence".into(),
            ModelSpec::External { command, .. } => {
                let exe = command.first().map(String::as_str).unwrap_or("");
                let base = exe.rsplit('/').next().unwrap_or(exe);
                format!("external:{base}")
            }
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, ModelSpec::External { .. })
    }
}

/// Runs a native (in-process) model.
pub fn forecast_native(spec: &ModelSpec, req: &ForecastRequest) -> Result<ForecastResponse, ForecastError> {
    spec.validate()?;
    match *spec {
        ModelSpec::Ma { window } => forecast_ma(req, window),
        ModelSpec::Arima { p, d, q, allow_ridge } => forecast_arima(req, p, d, q, allow_ridge),
        ModelSpec::Var { max_lag, select_order, allow_ridge } => {
            forecast_var(req, max_lag, VarOptions { select_order, allow_ridge })
        }
        ModelSpec::Persistence => forecast_persistence(req),
        ModelSpec::External { .. } => Err(ForecastError::ExternalModel),
    }
}

/// Clamps negatives to zero, then rounds half-to-even; either step is optional.
pub fn postprocess(mut resp: ForecastResponse, clamp_nonnegative: bool, round_to_integer: bool) -> ForecastResponse {
    for v in resp.forecast.iter_mut().flatten() {
        if clamp_nonnegative && *v < 0.0 {
            *v = 0.0;
        }
        if round_to_integer {
            *v = v.round_ties_even();
        }
        if *v == 0.0 {
            // normalizes -0.0
            *v = 0.0;
        }
    }
    resp
}
