//! CSV readers for the three dataset shapes (trip records, GPS trajectories,
//! pre-aggregated OD counts) and the time axis used to bin them.
//!
//! Row-level failures never abort a parse: they are collected as [`Reject`]s
//! carrying the 1-based file line number. Only structural problems (a mapped
//! column missing from the header, unreadable CSV) are hard errors.

use std::collections::HashMap;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tessellation::{LonLat, Tessellation};

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("unreadable CSV: {0}")]
    Csv(String),
    #[error("invalid time axis: {0}")]
    InvalidAxis(String),
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        IngestError::Csv(e.to_string())
    }
}

/// Uniform partition of time into `num_intervals` left-closed, right-open bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub origin_time: i64,
    pub interval_seconds: u32,
    pub num_intervals: usize,
}

impl TimeAxis {
    pub fn new(origin_time: i64, interval_seconds: u32, num_intervals: usize) -> Result<Self, IngestError> {
        if interval_seconds == 0 {
            return Err(IngestError::InvalidAxis("interval_seconds must be positive".into()));
        }
        if num_intervals == 0 {
            return Err(IngestError::InvalidAxis("num_intervals must be at least 1".into()));
        }
        Ok(Self { origin_time, interval_seconds, num_intervals })
    }

    /// Interval index of `ts`, or `None` when it falls outside the axis.
    pub fn bin(&self, ts: i64) -> Option<usize> {
        if ts < self.origin_time {
            return None;
        }
        let idx = (ts - self.origin_time) / i64::from(self.interval_seconds);
        usize::try_from(idx).ok().filter(|&i| i < self.num_intervals)
    }

    pub fn interval_start(&self, index: usize) -> i64 {
        self.origin_time + index as i64 * i64::from(self.interval_seconds)
    }

    /// Exclusive end of the last interval.
    pub fn end_time(&self) -> i64 {
        self.interval_start(self.num_intervals)
    }
}

/// Bins `ts` on `axis`; free-function form of [`TimeAxis::bin`].
pub fn bin_time(ts: i64, axis: &TimeAxis) -> Option<usize> {
    axis.bin(ts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub start_time: i64,
    pub end_time: i64,
    pub origin: LonLat,
    pub destination: LonLat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: i64,
    pub position: LonLat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub entity_id: String,
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdCountRecord {
    pub interval_start: i64,
    pub origin_id: String,
    pub destination_id: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

/// Accepted records in file order plus the rows that failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub rejects: Vec<Reject>,
}

/// Header names for trip CSVs. `end_time` is optional and defaults to the start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripColumns {
    pub start_time: String,
    pub end_time: Option<String>,
    pub origin_lon: String,
    pub origin_lat: String,
    pub destination_lon: String,
    pub destination_lat: String,
    /// Offset applied to timestamps without an explicit zone (local = UTC + offset).
    pub utc_offset_seconds: i32,
}

impl Default for TripColumns {
    fn default() -> Self {
        Self {
            start_time: "start_time".into(),
            end_time: Some("end_time".into()),
            origin_lon: "origin_lon".into(),
            origin_lat: "origin_lat".into(),
            destination_lon: "destination_lon".into(),
            destination_lat: "destination_lat".into(),
            utc_offset_seconds: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryColumns {
    pub entity_id: String,
    pub timestamp: String,
    pub lon: String,
    pub lat: String,
    pub utc_offset_seconds: i32,
}

impl Default for TrajectoryColumns {
    fn default() -> Self {
        Self {
            entity_id: "entity_id".into(),
            timestamp: "timestamp".into(),
            lon: "lon".into(),
            lat: "lat".into(),
            utc_offset_seconds: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdCountColumns {
    pub interval_start: String,
    pub origin: String,
    pub destination: String,
    pub count: String,
    pub utc_offset_seconds: i32,
}

impl Default for OdCountColumns {
    fn default() -> Self {
        Self {
            interval_start: "interval_start".into(),
            origin: "origin_id".into(),
            destination: "destination_id".into(),
            count: "count".into(),
            utc_offset_seconds: 0,
        }
    }
}

/// Parses a timestamp into UTC epoch seconds.
///
/// Accepts integer or decimal epoch seconds (floored), RFC 3339, and naive
/// `YYYY-MM-DD[ T]HH:MM:SS[.fff]` / `YYYY-MM-DD` forms. Naive forms are local
/// times at `utc_offset_seconds` east of UTC.
pub fn parse_timestamp(raw: &str, utc_offset_seconds: i32) -> Result<i64, String> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        if v.is_finite() {
            return Ok(v.floor() as i64);
        }
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M", "%m/%d/%Y %H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(naive.and_utc().timestamp() - i64::from(utc_offset_seconds));
        }
    }
    if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        let naive = date.and_hms_opt(0, 0, 0).expect("midnight exists");
        return Ok(naive.and_utc().timestamp() - i64::from(utc_offset_seconds));
    }
    Err(format!("unparseable timestamp {raw:?}"))
}

struct Header {
    index: HashMap<String, usize>,
}

impl Header {
    fn read(reader: &mut csv::Reader<&[u8]>) -> Result<Self, IngestError> {
        let index = reader
            .headers()?
            .iter()
            .enumerate()
            .map(|(i, name)| (name.trim().to_string(), i))
            .collect();
        Ok(Self { index })
    }

    fn column(&self, name: &str) -> Result<usize, IngestError> {
        self.index.get(name).copied().ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes())
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize, name: &str) -> Result<&'r str, String> {
    rec.get(idx).map(str::trim).ok_or_else(|| format!("missing field {name}"))
}

fn coordinate(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<f64, String> {
    let raw = field(rec, idx, name)?;
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("{name}: not a finite number: {raw:?}"))
}

/// Iterates data rows, handing each to `row` and turning its `Err` into a reject.
fn for_each_row<C, T>(
    text: &str,
    header: impl FnOnce(&Header) -> Result<C, IngestError>,
    mut row: impl FnMut(&C, &csv::StringRecord) -> Result<T, String>,
) -> Result<Parsed<T>, IngestError> {
    let mut rdr = reader(text);
    let head = Header::read(&mut rdr)?;
    let ctx = header(&head)?;
    let mut out = Parsed { records: Vec::new(), rejects: Vec::new() };
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line());
                if record.iter().all(|f| f.trim().is_empty()) {
                    continue;
                }
                match row(&ctx, &record) {
                    Ok(v) => out.records.push(v),
                    Err(reason) => out.rejects.push(Reject { line, reason }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) {
                    out.rejects.push(Reject { line, reason: e.to_string() });
                } else {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(out)
}

/// Parses trip records. Rows with unparseable fields or `end_time < start_time` are rejected.
pub fn parse_trips(text: &str, columns: &TripColumns) -> Result<Parsed<TripRecord>, IngestError> {
    let off = columns.utc_offset_seconds;
    for_each_row(
        text,
        |h| {
            let end = match &columns.end_time {
                Some(name) => Some(h.column(name)?),
                None => None,
            };
            Ok((
                [
                    h.column(&columns.start_time)?,
                    h.column(&columns.origin_lon)?,
                    h.column(&columns.origin_lat)?,
                    h.column(&columns.destination_lon)?,
                    h.column(&columns.destination_lat)?,
                ],
                end,
            ))
        },
        |(idx, end_idx), rec| {
            let start_time = parse_timestamp(field(rec, idx[0], &columns.start_time)?, off)?;
            let end_time = match *end_idx {
                Some(e) => {
                    let raw = field(rec, e, "end_time")?;
                    if raw.is_empty() {
                        start_time
                    } else {
                        parse_timestamp(raw, off)?
                    }
                }
                None => start_time,
            };
            if end_time < start_time {
                return Err(format!("end_time {end_time} precedes start_time {start_time}"));
            }
            Ok(TripRecord {
                start_time,
                end_time,
                origin: LonLat::new(
                    coordinate(rec, idx[1], &columns.origin_lon)?,
                    coordinate(rec, idx[2], &columns.origin_lat)?,
                ),
                destination: LonLat::new(
                    coordinate(rec, idx[3], &columns.destination_lon)?,
                    coordinate(rec, idx[4], &columns.destination_lat)?,
                ),
            })
        },
    )
}

/// Parses GPS fixes and groups them into per-entity trajectories.
///
/// Trajectories appear in order of each entity's first row; points are sorted
/// by timestamp (stable, so equal timestamps keep file order).
pub fn parse_trajectories(text: &str, columns: &TrajectoryColumns) -> Result<Parsed<Trajectory>, IngestError> {
    let off = columns.utc_offset_seconds;
    let rows = for_each_row(
        text,
        |h| {
            Ok([h.column(&columns.entity_id)?, h.column(&columns.timestamp)?, h.column(&columns.lon)?, h.column(&columns.lat)?])
        },
        |idx, rec| {
            let entity = field(rec, idx[0], &columns.entity_id)?;
            if entity.is_empty() {
                return Err("empty entity id".to_string());
            }
            let time = parse_timestamp(field(rec, idx[1], &columns.timestamp)?, off)?;
            let position =
                LonLat::new(coordinate(rec, idx[2], &columns.lon)?, coordinate(rec, idx[3], &columns.lat)?);
            Ok((entity.to_string(), TrajectoryPoint { time, position }))
        },
    )?;

    let mut order: HashMap<String, usize> = HashMap::new();
    let mut trajectories: Vec<Trajectory> = Vec::new();
    for (entity_id, point) in rows.records {
        let slot = *order.entry(entity_id.clone()).or_insert_with(|| {
            trajectories.push(Trajectory { entity_id, points: Vec::new() });
            trajectories.len() - 1
        });
        trajectories[slot].points.push(point);
    }
    for t in &mut trajectories {
        t.points.sort_by_key(|p| p.time);
    }
    Ok(Parsed { records: trajectories, rejects: rows.rejects })
}

/// Turns tile transitions into trips.
///
/// One trip per consecutive point pair whose located tiles differ. A point
/// outside every tile breaks the chain: no trip is emitted across it.
pub fn trajectory_to_trips(trajectory: &Trajectory, tess: &Tessellation) -> Vec<TripRecord> {
    let located: Vec<Option<usize>> = trajectory.points.iter().map(|p| tess.locate(p.position)).collect();
    trajectory
        .points
        .windows(2)
        .zip(located.windows(2))
        .filter_map(|(pts, tiles)| match (tiles[0], tiles[1]) {
            (Some(a), Some(b)) if a != b => Some(TripRecord {
                start_time: pts[0].time,
                end_time: pts[1].time,
                origin: pts[0].position,
                destination: pts[1].position,
            }),
            _ => None,
        })
        .collect()
}

/// Parses OD counts; rows whose interval start lies outside `axis` are rejected.
pub fn parse_od_counts(
    text: &str,
    columns: &OdCountColumns,
    axis: &TimeAxis,
) -> Result<Parsed<OdCountRecord>, IngestError> {
    let off = columns.utc_offset_seconds;
    for_each_row(
        text,
        |h| {
            Ok([
                h.column(&columns.interval_start)?,
                h.column(&columns.origin)?,
                h.column(&columns.destination)?,
                h.column(&columns.count)?,
            ])
        },
        |idx, rec| {
            let interval_start = parse_timestamp(field(rec, idx[0], &columns.interval_start)?, off)?;
            if axis.bin(interval_start).is_none() {
                return Err(format!("interval start {interval_start} outside the time axis"));
            }
            let origin_id = field(rec, idx[1], &columns.origin)?;
            let destination_id = field(rec, idx[2], &columns.destination)?;
            if origin_id.is_empty() || destination_id.is_empty() {
                return Err("empty origin or destination id".to_string());
            }
            let raw = field(rec, idx[3], &columns.count)?;
            let count = match raw.parse::<i64>() {
                Ok(c) if c < 0 => return Err(format!("negative count {c}")),
                Ok(c) => c as u64,
                Err(_) => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() && v >= 0.0 && v.fract() == 0.0 => v as u64,
                    Ok(v) if v < 0.0 => return Err(format!("negative count {raw}")),
                    _ => return Err(format!("count is not a non-negative integer: {raw:?}")),
                },
            };
            Ok(OdCountRecord {
                interval_start,
                origin_id: origin_id.to_string(),
                destination_id: destination_id.to_string(),
                count,
            })
        },
    )
}

/// Canonical trip CSV, readable by [`parse_trips`] with default columns.
pub fn write_trips_csv(trips: &[TripRecord]) -> String {
    let mut out = String::from("start_time,end_time,origin_lon,origin_lat,destination_lon,destination_lat\n");
    for t in trips {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.start_time, t.end_time, t.origin.lon, t.origin.lat, t.destination.lon, t.destination.lat
        ));
    }
    out
}

/// Reject report as `line_number,reason` CSV.
pub fn write_rejects_csv(rejects: &[Reject]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["line_number", "reason"]).expect("in-memory write");
    for r in rejects {
        w.write_record([r.line.to_string(), r.reason.clone()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input yields utf-8 output")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tessellation::{build_square_grid, BBox};

    const HEADER: &str = "start_time,end_time,origin_lon,origin_lat,destination_lon,destination_lat\n";

    #[test]
    fn three_good_trips() {
        let text = format!("{HEADER}0,10,0.5,0.5,1.5,0.5\n20,30,1.5,0.5,0.5,1.5\n40,40,0.1,0.1,0.2,0.2\n");
        let parsed = parse_trips(&text, &TripColumns::default()).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert!(parsed.rejects.is_empty());
        assert_eq!(parsed.records[1].destination, LonLat::new(0.5, 1.5));
    }

    #[test]
    fn bad_rows_are_rejected_with_line_numbers() {
        let text = format!("{HEADER}0,10,0.5,0.5,1.5,0.5\n0,10,0.5,north,1.5,0.5\n50,10,0.5,0.5,1.5,0.5\n");
        let parsed = parse_trips(&text, &TripColumns::default()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.rejects.len(), 2);
        assert_eq!(parsed.rejects[0].line, 3);
        assert!(parsed.rejects[0].reason.contains("origin_lat"));
        assert_eq!(parsed.rejects[1].line, 4);
        assert!(parsed.rejects[1].reason.contains("precedes"));
    }

    #[test]
    fn missing_mapped_column_is_hard_error() {
        let text = "start_time,origin_lon,origin_lat\n0,1,1\n";
        let cols = TripColumns { end_time: None, ..TripColumns::default() };
        assert_eq!(parse_trips(text, &cols), Err(IngestError::MissingColumn("destination_lon".into())));
    }

    #[test]
    fn end_time_defaults_to_start() {
        let text = "t,a,b,c,d\n2014-04-01 00:00:07,1,2,3,4\n";
        let cols = TripColumns {
            start_time: "t".into(),
            end_time: None,
            origin_lon: "a".into(),
            origin_lat: "b".into(),
            destination_lon: "c".into(),
            destination_lat: "d".into(),
            utc_offset_seconds: 0,
        };
        let parsed = parse_trips(text, &cols).unwrap();
        assert_eq!(parsed.records[0].start_time, 1_396_310_407);
        assert_eq!(parsed.records[0].end_time, 1_396_310_407);
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("3600", 0), Ok(3600));
        assert_eq!(parse_timestamp("3600.9", 0), Ok(3600));
        assert_eq!(parse_timestamp("1970-01-01T01:00:00Z", 0), Ok(3600));
        assert_eq!(parse_timestamp("1970-01-01T02:00:00+01:00", 0), Ok(3600));
        assert_eq!(parse_timestamp("1970-01-01 02:00:00", 3600), Ok(3600));
        assert_eq!(parse_timestamp("1970-01-02", 0), Ok(86400));
        assert!(parse_timestamp("yesterday", 0).is_err());
    }

    #[test]
    fn trajectories_sorted_and_grouped() {
        let text = "entity_id,timestamp,lon,lat\ntaxi,30,0,0\ntaxi,10,1,1\ncab,5,2,2\ntaxi,40,3,3\ntaxi,20,4,4\ncab,1,5,5\n";
        let parsed = parse_trajectories(text, &TrajectoryColumns::default()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        let taxi = &parsed.records[0];
        assert_eq!(taxi.entity_id, "taxi");
        assert_eq!(taxi.points.iter().map(|p| p.time).collect::<Vec<_>>(), vec![10, 20, 30, 40]);
        assert_eq!(parsed.records[1].points.iter().map(|p| p.time).collect::<Vec<_>>(), vec![1, 5]);

        let empty = parse_trajectories("entity_id,timestamp,lon,lat\n", &TrajectoryColumns::default()).unwrap();
        assert!(empty.records.is_empty());
    }

    fn traj(points: &[(i64, f64, f64)]) -> Trajectory {
        Trajectory {
            entity_id: "x".into(),
            points: points
                .iter()
                .map(|&(time, lon, lat)| TrajectoryPoint { time, position: LonLat::new(lon, lat) })
                .collect(),
        }
    }

    #[test]
    fn transitions() {
        let grid = build_square_grid(BBox::new(0.0, 0.0, 2.0, 2.0).unwrap(), 1.0).unwrap();
        let trips = trajectory_to_trips(&traj(&[(0, 0.2, 0.2), (10, 0.7, 0.3), (20, 1.5, 0.5)]), &grid);
        assert_eq!(trips.len(), 1);
        assert_eq!(trips[0].start_time, 10);
        assert_eq!(trips[0].end_time, 20);
        assert_eq!(trips[0].origin, LonLat::new(0.7, 0.3));

        assert!(trajectory_to_trips(&traj(&[(0, 0.2, 0.2), (10, 0.3, 0.3)]), &grid).is_empty());
        assert!(trajectory_to_trips(&traj(&[(0, 0.2, 0.2), (10, 9.0, 9.0), (20, 1.5, 0.5)]), &grid).is_empty());
    }

    #[test]
    fn binning() {
        let axis = TimeAxis::new(0, 3600, 24).unwrap();
        assert_eq!(bin_time(1800, &axis), Some(0));
        assert_eq!(bin_time(3600, &axis), Some(1));
        assert_eq!(bin_time(-1, &axis), None);
        assert_eq!(bin_time(24 * 3600, &axis), None);
        assert_eq!(axis.end_time(), 86400);
        assert!(TimeAxis::new(0, 0, 1).is_err());
        assert!(TimeAxis::new(0, 1, 0).is_err());
    }

    #[test]
    fn od_counts() {
        let axis = TimeAxis::new(0, 3600, 2).unwrap();
        let text = "interval_start,origin_id,destination_id,count\n0,a,b,3\n3600,b,a,0\n";
        let parsed = parse_od_counts(text, &OdCountColumns::default(), &axis).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert!(parsed.rejects.is_empty());

        let bad = "interval_start,origin_id,destination_id,count\n0,a,b,-3\n7200,a,b,1\n0,a,b,1.5\n";
        let parsed = parse_od_counts(bad, &OdCountColumns::default(), &axis).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.rejects.iter().map(|r| r.line).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert!(parsed.rejects[0].reason.contains("negative"));
        assert!(parsed.rejects[1].reason.contains("outside"));
    }

    #[test]
    fn reject_report_csv() {
        let csv = write_rejects_csv(&[Reject { line: 3, reason: "bad, very bad".into() }]);
        assert_eq!(csv, "line_number,reason\n3,\"bad, very bad\"\n");
    }
}
