//! Origin–destination flow forecasting toolkit.
//!
//! The pipeline runs tessellation → ingestion → OD tensor → per-origin
//! series → forecasts → metrics. Each stage lives in its own module:
//!
//! - [`tessellation`]: square grids and GeoJSON polygon sets, point lookup, validation.
//! - [`ingest`]: CSV readers for trips, GPS trajectories and OD counts.
//! - [`flows`]: OD tensors, inflow/outflow, per-origin decomposition, splits.
//! - [`forecast`]: the forecaster contract plus MA, ARIMA, VAR and persistence.
//! - [`bridge`]: line-delimited JSON protocol for external forecaster processes.
//! - [`metrics`]: RMSE, MAE and CPC.
//! - [`harness`]: config-driven experiments, synthetic cities and reports.
//! - [`exec`]: the data-parallel fan-out used by the harness.

pub mod bridge;
pub mod exec;
pub mod flows;
pub mod forecast;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod tessellation;
