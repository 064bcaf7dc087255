//! Origin–destination tensors and the views derived from them.
//!
//! `ODTensor` stores integer counts densely, indexed `(interval, origin,
//! destination)`. Flows (inflow/outflow per tile), per-origin series and
//! train/test splits are all read-only views computed from a tensor.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{OdCountRecord, TimeAxis, TripRecord};
use crate::tessellation::Tessellation;

/// Default cap on `t * n * n` cells for a dense tensor.
pub const DEFAULT_MAX_CELLS: u64 = 1 << 31;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("tensor of {intervals} x {tiles} x {tiles} cells exceeds the budget of {budget} cells")]
    TooLarge { intervals: usize, tiles: usize, budget: u64 },
    #[error("{count} unknown tile identifier(s), first offenders: {first:?}")]
    UnknownTiles { count: usize, first: Vec<String> },
    #[error("record interval start {0} lies outside the time axis")]
    OutOfAxis(i64),
    #[error("split instant {instant} must lie strictly inside ({start}, {end})")]
    SplitOutsideAxis { instant: i64, start: i64, end: i64 },
    #[error("split instant {0} leaves an empty train or test part")]
    EmptySplit(i64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed tensor CSV at line {line}: {reason}")]
    MalformedCsv { line: u64, reason: String },
}

/// Dense `t x n x n` count tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ODTensor {
    axis: TimeAxis,
    n: usize,
    counts: Vec<u64>,
}

impl ODTensor {
    pub fn zeros(axis: TimeAxis, n: usize) -> Result<Self, FlowError> {
        Self::zeros_with_budget(axis, n, DEFAULT_MAX_CELLS)
    }

    pub fn zeros_with_budget(axis: TimeAxis, n: usize, max_cells: u64) -> Result<Self, FlowError> {
        let cells = (axis.num_intervals as u64)
            .checked_mul(n as u64)
            .and_then(|c| c.checked_mul(n as u64));
        match cells {
            Some(c) if c <= max_cells => Ok(Self { axis, n, counts: vec![0; c as usize] }),
            _ => Err(FlowError::TooLarge { intervals: axis.num_intervals, tiles: n, budget: max_cells }),
        }
    }

    /// Wraps a flat `(interval, origin, destination)` row-major buffer.
    pub fn from_counts(axis: TimeAxis, n: usize, counts: Vec<u64>) -> Result<Self, FlowError> {
        let expected = axis.num_intervals * n * n;
        if counts.len() != expected {
            return Err(FlowError::Shape(format!("expected {expected} cells, got {}", counts.len())));
        }
        Ok(Self { axis, n, counts })
    }

    pub fn axis(&self) -> &TimeAxis {
        &self.axis
    }

    pub fn intervals(&self) -> usize {
        self.axis.num_intervals
    }

    pub fn tiles(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    fn offset(&self, interval: usize, origin: usize, destination: usize) -> usize {
        (interval * self.n + origin) * self.n + destination
    }

    pub fn get(&self, interval: usize, origin: usize, destination: usize) -> u64 {
        self.counts[self.offset(interval, origin, destination)]
    }

    pub fn add(&mut self, interval: usize, origin: usize, destination: usize, count: u64) {
        let at = self.offset(interval, origin, destination);
        self.counts[at] += count;
    }

    /// The `n x n` matrix of one interval, row-major by origin.
    pub fn matrix(&self, interval: usize) -> &[u64] {
        let nn = self.n * self.n;
        &self.counts[interval * nn..(interval + 1) * nn]
    }

    /// Outgoing vector `s_interval` of one origin.
    pub fn row(&self, interval: usize, origin: usize) -> &[u64] {
        let at = self.offset(interval, origin, 0);
        &self.counts[at..at + self.n]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Joins two tensors over consecutive axes along time.
    pub fn concat_time(&self, later: &ODTensor) -> Result<ODTensor, FlowError> {
        if self.n != later.n
            || self.axis.interval_seconds != later.axis.interval_seconds
            || self.axis.end_time() != later.axis.origin_time
        {
            return Err(FlowError::Shape("tensors are not consecutive on the same grid".into()));
        }
        let axis = TimeAxis { num_intervals: self.intervals() + later.intervals(), ..self.axis };
        let mut counts = self.counts.clone();
        counts.extend_from_slice(&later.counts);
        Ok(ODTensor { axis, n: self.n, counts })
    }
}

/// Trips dropped while building a tensor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub processed: u64,
    pub unlocated: u64,
    pub out_of_axis: u64,
}

impl SkipCounts {
    pub fn skipped(&self) -> u64 {
        self.unlocated + self.out_of_axis
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorBuild {
    pub tensor: ODTensor,
    pub skips: SkipCounts,
}

/// Counts trips by departure interval, origin tile and destination tile.
///
/// Trips with an unlocatable endpoint or a start time off the axis are
/// tallied in [`SkipCounts`] rather than failing the build.
pub fn build_od_tensor(trips: &[TripRecord], tess: &Tessellation, axis: TimeAxis) -> Result<TensorBuild, FlowError> {
    build_od_tensor_with_budget(trips, tess, axis, DEFAULT_MAX_CELLS)
}

pub fn build_od_tensor_with_budget(
    trips: &[TripRecord],
    tess: &Tessellation,
    axis: TimeAxis,
    max_cells: u64,
) -> Result<TensorBuild, FlowError> {
    let mut tensor = ODTensor::zeros_with_budget(axis, tess.len(), max_cells)?;
    let mut skips = SkipCounts::default();
    for trip in trips {
        skips.processed += 1;
        let (Some(o), Some(d)) = (tess.locate(trip.origin), tess.locate(trip.destination)) else {
            skips.unlocated += 1;
            continue;
        };
        let Some(tau) = axis.bin(trip.start_time) else {
            skips.out_of_axis += 1;
            continue;
        };
        tensor.add(tau, o, d, 1);
    }
    Ok(TensorBuild { tensor, skips })
}

/// Sums pre-aggregated counts into a tensor; duplicate keys accumulate.
pub fn build_od_tensor_from_counts(
    records: &[OdCountRecord],
    tess: &Tessellation,
    axis: TimeAxis,
) -> Result<ODTensor, FlowError> {
    let mut tensor = ODTensor::zeros(axis, tess.len())?;
    let mut unknown: Vec<String> = Vec::new();
    let mut unknown_count = 0usize;
    for r in records {
        let tau = axis.bin(r.interval_start).ok_or(FlowError::OutOfAxis(r.interval_start))?;
        let mut resolve = |label: &str| {
            let id = tess.tile_by_label(label);
            if id.is_none() {
                unknown_count += 1;
                if unknown.len() < 10 && !unknown.iter().any(|u| u == label) {
                    unknown.push(label.to_string());
                }
            }
            id
        };
        let o = resolve(&r.origin_id);
        let d = resolve(&r.destination_id);
        if let (Some(o), Some(d)) = (o, d) {
            tensor.add(tau, o, d, r.count);
        }
    }
    if unknown_count > 0 {
        return Err(FlowError::UnknownTiles { count: unknown_count, first: unknown });
    }
    Ok(tensor)
}

/// Per-tile inflow and outflow, each `t x n` row-major by interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSeries {
    pub axis: TimeAxis,
    pub n: usize,
    pub inflow: Vec<u64>,
    pub outflow: Vec<u64>,
}

impl FlowSeries {
    pub fn inflow_at(&self, interval: usize) -> &[u64] {
        &self.inflow[interval * self.n..(interval + 1) * self.n]
    }

    pub fn outflow_at(&self, interval: usize) -> &[u64] {
        &self.outflow[interval * self.n..(interval + 1) * self.n]
    }
}

/// Row sums (outflow) and column sums (inflow) of every interval matrix.
///
/// With `include_self_loops == false` the diagonal is left out of both sums:
/// staying in a tile is neither entering nor leaving it.
pub fn derive_flows(tensor: &ODTensor, include_self_loops: bool) -> FlowSeries {
    let (inflow, outflow) = flow_sums(tensor.as_slice(), tensor.tiles(), include_self_loops);
    FlowSeries { axis: tensor.axis, n: tensor.tiles(), inflow, outflow }
}

/// Inflow/outflow over a stack of `n x n` matrices of any additive type.
pub fn flow_sums<T>(matrices: &[T], n: usize, include_self_loops: bool) -> (Vec<T>, Vec<T>)
where
    T: Copy + Default + std::ops::AddAssign,
{
    let nn = n * n;
    let t = matrices.len().checked_div(nn).unwrap_or(0);
    let mut inflow = vec![T::default(); t * n];
    let mut outflow = vec![T::default(); t * n];
    for tau in 0..t {
        let m = &matrices[tau * nn..(tau + 1) * nn];
        for i in 0..n {
            for j in 0..n {
                if i == j && !include_self_loops {
                    continue;
                }
                let v = m[i * n + j];
                outflow[tau * n + i] += v;
                inflow[tau * n + j] += v;
            }
        }
    }
    (inflow, outflow)
}

/// Outgoing-flow history of one origin: `vectors[tau][j] = T[tau, origin, j]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginSeries {
    pub origin: usize,
    pub vectors: Vec<Vec<u64>>,
}

pub fn decompose_per_origin(tensor: &ODTensor) -> Vec<OriginSeries> {
    (0..tensor.tiles())
        .map(|origin| OriginSeries {
            origin,
            vectors: (0..tensor.intervals()).map(|tau| tensor.row(tau, origin).to_vec()).collect(),
        })
        .collect()
}

/// Inverse of [`decompose_per_origin`].
pub fn recompose(series: &[OriginSeries], axis: TimeAxis) -> Result<ODTensor, FlowError> {
    let n = series.len();
    let mut tensor = ODTensor::zeros(axis, n)?;
    for s in series {
        if s.origin >= n || s.vectors.len() != axis.num_intervals {
            return Err(FlowError::Shape(format!("series for origin {} does not fit the axis", s.origin)));
        }
        for (tau, v) in s.vectors.iter().enumerate() {
            if v.len() != n {
                return Err(FlowError::Shape(format!("vector of length {} for {n} tiles", v.len())));
            }
            let at = tensor.offset(tau, s.origin, 0);
            tensor.counts[at..at + n].copy_from_slice(v);
        }
    }
    Ok(tensor)
}

/// Splits at `split_instant`: intervals starting before it form the train part.
pub fn split_train_test(tensor: &ODTensor, split_instant: i64) -> Result<(ODTensor, ODTensor), FlowError> {
    let axis = tensor.axis;
    if split_instant <= axis.origin_time || split_instant >= axis.end_time() {
        return Err(FlowError::SplitOutsideAxis {
            instant: split_instant,
            start: axis.origin_time,
            end: axis.end_time(),
        });
    }
    let step = i64::from(axis.interval_seconds);
    let train_len = ((split_instant - axis.origin_time + step - 1) / step) as usize;
    if train_len == 0 || train_len >= axis.num_intervals {
        return Err(FlowError::EmptySplit(split_instant));
    }
    let nn = tensor.n * tensor.n;
    let (head, tail) = tensor.counts.split_at(train_len * nn);
    let train_axis = TimeAxis { num_intervals: train_len, ..axis };
    let test_axis = TimeAxis {
        origin_time: axis.interval_start(train_len),
        interval_seconds: axis.interval_seconds,
        num_intervals: axis.num_intervals - train_len,
    };
    Ok((
        ODTensor { axis: train_axis, n: tensor.n, counts: head.to_vec() },
        ODTensor { axis: test_axis, n: tensor.n, counts: tail.to_vec() },
    ))
}

/// `interval_index,origin_id,destination_id,count` rows, zeros omitted, ordered by interval, origin, destination.
pub fn write_tensor_csv(tensor: &ODTensor, tess: &Tessellation) -> String {
    let mut out = String::from("interval_index,origin_id,destination_id,count\n");
    let n = tensor.tiles();
    for tau in 0..tensor.intervals() {
        for (k, &c) in tensor.matrix(tau).iter().enumerate() {
            if c != 0 {
                let _ = writeln!(out, "{tau},{},{},{c}", tess.label(k / n), tess.label(k % n));
            }
        }
    }
    out
}

pub fn read_tensor_csv(text: &str, tess: &Tessellation, axis: TimeAxis) -> Result<ODTensor, FlowError> {
    let mut tensor = ODTensor::zeros(axis, tess.len())?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| FlowError::MalformedCsv {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| FlowError::MalformedCsv { line, reason };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", rec.len())));
        }
        let tau: usize = rec[0].trim().parse().map_err(|_| bad(format!("bad interval index {:?}", &rec[0])))?;
        if tau >= axis.num_intervals {
            return Err(bad(format!("interval index {tau} outside the axis")));
        }
        let o = tess.tile_by_label(rec[1].trim()).ok_or_else(|| bad(format!("unknown tile {:?}", &rec[1])))?;
        let d = tess.tile_by_label(rec[2].trim()).ok_or_else(|| bad(format!("unknown tile {:?}", &rec[2])))?;
        let c: u64 = rec[3].trim().parse().map_err(|_| bad(format!("bad count {:?}", &rec[3])))?;
        tensor.add(tau, o, d, c);
    }
    Ok(tensor)
}
