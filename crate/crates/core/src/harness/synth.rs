//! Deterministic synthetic cities with a daily cycle.
//!
//! Tiles form a grid of 1/64-degree cells. Every origin–destination pair
//! `(i, j)` gets a base rate and a cycle amplitude, and interval `tau`
//! carries
//!
//! ```text
//! count = max(0, base_ij + scale_ij * min(k, s - k) + e),   k = tau mod s
//! ```
//!
//! trips, where `s` is the number of intervals per day and `e` is uniform on
//! the integers in `[-noise, noise]`. With `noise == 0` the tensor is exactly
//! periodic with period `s`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DatasetConfig, ExperimentConfig, TessellationConfig, TimeAxisConfig};
use super::HarnessError;
use crate::flows::{write_tensor_csv, ODTensor};
use crate::forecast::ModelSpec;
use crate::ingest::{write_trips_csv, TimeAxis, TripColumns, TripRecord};
use crate::tessellation::{build_square_grid, BBox, LonLat, Tessellation};

pub const SYNTH_ORIGIN_TIME: i64 = 1_704_067_200; // 2024-01-01T00:00:00Z
const SW_CORNER: (f64, f64) = (-74.0, 40.5);
const CELL: f64 = 1.0 / 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeasonalPattern {
    /// Base rates are drawn uniformly from `0..=base_max`.
    pub base_max: u32,
    /// Cycle amplitudes are drawn uniformly from `0..=scale_max`.
    pub scale_max: u32,
    pub noise: u32,
}

impl Default for SeasonalPattern {
    fn default() -> Self {
        Self { base_max: 2, scale_max: 1, noise: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_tiles: usize,
    pub days: usize,
    pub interval_seconds: u32,
    #[serde(default)]
    pub pattern: SeasonalPattern,
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub spec: SyntheticSpec,
    pub tessellation: Tessellation,
    pub truth: ODTensor,
    pub trips: Vec<TripRecord>,
    /// Per pair, row-major.
    pub base: Vec<u32>,
    pub scale: Vec<u32>,
}

/// Smallest divisor of `n` that is at least `sqrt(n)`.
fn grid_cols(n: usize) -> usize {
    (1..=n).find(|&c| n.is_multiple_of(c) && c * c >= n).unwrap_or(n)
}

fn tri(k: usize, season: usize) -> usize {
    k.min(season - k)
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl SyntheticCity {
    pub fn season(&self) -> usize {
        (86_400 / self.spec.interval_seconds) as usize
    }

    /// Closed-form trip total when there is no noise:
    /// `days * sum_ij (s * base_ij + scale_ij * floor(s^2 / 4))`.
    pub fn analytic_total(&self) -> Option<u64> {
        if self.spec.pattern.noise != 0 {
            return None;
        }
        let s = self.season() as u64;
        let per_day: u64 = self.base.iter().zip(&self.scale).map(|(&b, &a)| s * u64::from(b) + u64::from(a) * (s * s / 4)).sum();
        Some(self.spec.days as u64 * per_day)
    }

    pub fn region(&self) -> BBox {
        self.tessellation.region()
    }

    /// A ready-to-run experiment over `trips.csv` that holds out the last `test_days`.
    pub fn experiment_config(&self, test_days: usize, models: Vec<ModelSpec>) -> ExperimentConfig {
        let r = self.region();
        let s = self.season();
        let split = self.truth.axis().interval_start((self.spec.days - test_days) * s);
        ExperimentConfig {
            name: format!("synthetic city (seed {}, {} tiles, {} days)", self.spec.seed, self.spec.n_tiles, self.spec.days),
            dataset: DatasetConfig::Trips { path: PathBuf::from("trips.csv"), columns: TripColumns::default() },
            tessellation: TessellationConfig::Grid {
                min_lon: r.min_lon,
                min_lat: r.min_lat,
                max_lon: r.max_lon,
                max_lat: r.max_lat,
                cell_size: CELL,
            },
            time_axis: TimeAxisConfig {
                origin: self.truth.axis().origin_time.to_string(),
                interval_seconds: self.spec.interval_seconds,
                num_intervals: self.truth.intervals(),
            },
            split: split.to_string(),
            evaluation: Default::default(),
            baseline: models.first().map(ModelSpec::label),
            models,
            postprocess: Default::default(),
            include_self_loops: false,
            published_rows: Vec::new(),
            published_claims: Vec::new(),
            output: None,
            workers: None,
            base_dir: PathBuf::new(),
        }
    }
}

pub fn generate_synthetic_city(spec: SyntheticSpec) -> Result<SyntheticCity, HarnessError> {
    let bad = |m: &str| Err(HarnessError::Config(format!("synthetic city: {m}")));
    if spec.n_tiles < 2 {
        return bad("need at least 2 tiles");
    }
    if spec.days < 2 {
        return bad("need at least 2 days");
    }
    if spec.interval_seconds == 0 || 86_400 % spec.interval_seconds != 0 {
        return bad("interval_seconds must divide a day");
    }
    let n = spec.n_tiles;
    let cols = grid_cols(n);
    let rows = n / cols;
    let (lon0, lat0) = SW_CORNER;
    let region = BBox::new(lon0, lat0, lon0 + cols as f64 * CELL, lat0 + rows as f64 * CELL)?;
    let tessellation = build_square_grid(region, CELL)?;
    debug_assert_eq!(tessellation.len(), n);

    let season = (86_400 / spec.interval_seconds) as usize;
    let intervals = spec.days * season;
    let axis = TimeAxis::new(SYNTH_ORIGIN_TIME, spec.interval_seconds, intervals)?;
    let mut truth = ODTensor::zeros(axis, n)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.pattern;
    let base: Vec<u32> = (0..n * n).map(|_| rng.gen_range(0..=p.base_max)).collect();
    let scale: Vec<u32> = (0..n * n).map(|_| rng.gen_range(0..=p.scale_max)).collect();

    let point_in = |rng: &mut ChaCha8Rng, tile: usize| {
        let (r, c) = (tile / cols, tile % cols);
        LonLat {
            lon: round6(lon0 + (c as f64 + rng.gen_range(0.05..0.95)) * CELL),
            lat: round6(lat0 + (r as f64 + rng.gen_range(0.05..0.95)) * CELL),
        }
    };

    let mut trips = Vec::new();
    for tau in 0..intervals {
        let level = tri(tau % season, season) as i64;
        let start = axis.interval_start(tau);
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let noise = if p.noise > 0 { rng.gen_range(-(p.noise as i64)..=p.noise as i64) } else { 0 };
                let count = (i64::from(base[k]) + i64::from(scale[k]) * level + noise).max(0) as u64;
                truth.add(tau, i, j, count);
                for _ in 0..count {
                    let t0 = start + rng.gen_range(0..i64::from(spec.interval_seconds));
                    let origin = point_in(&mut rng, i);
                    let destination = point_in(&mut rng, j);
                    let end_time = t0 + rng.gen_range(60..=1800);
                    trips.push(TripRecord { start_time: t0, end_time, origin, destination });
                }
            }
        }
    }
    Ok(SyntheticCity { spec, tessellation, truth, trips, base, scale })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticFiles {
    pub trips: PathBuf,
    pub truth: PathBuf,
    pub config: PathBuf,
}

/// Writes `trips.csv`, `truth.csv` and a `config.json` experiment next to them.
pub fn write_synthetic_city(
    city: &SyntheticCity,
    dir: &Path,
    test_days: usize,
    models: Vec<ModelSpec>,
) -> Result<SyntheticFiles, HarnessError> {
    if test_days == 0 || test_days >= city.spec.days {
        return Err(HarnessError::Config(format!("test_days must be in 1..{}", city.spec.days)));
    }
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let files = SyntheticFiles { trips: dir.join("trips.csv"), truth: dir.join("truth.csv"), config: dir.join("config.json") };
    let cfg = city.experiment_config(test_days, models);
    let json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    for (path, body) in [
        (&files.trips, write_trips_csv(&city.trips)),
        (&files.truth, write_tensor_csv(&city.truth, &city.tessellation)),
        (&files.config, json),
    ] {
        std::fs::write(path, body).map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(noise: u32) -> SyntheticSpec {
        SyntheticSpec {
            seed: 1,
            n_tiles: 6,
            days: 2,
            interval_seconds: 3600,
            pattern: SeasonalPattern { base_max: 2, scale_max: 1, noise },
        }
    }

    #[test]
    fn layout() {
        assert_eq!(grid_cols(16), 4);
        assert_eq!(grid_cols(6), 3);
        assert_eq!(grid_cols(7), 7);
        let city = generate_synthetic_city(spec(0)).unwrap();
        assert_eq!(city.tessellation.grid_shape(), Some((2, 3)));
    }

    #[test]
    fn noiseless_total_and_period() {
        let city = generate_synthetic_city(spec(0)).unwrap();
        // Independent oracle: sum the pattern term by term.
        let s = 24;
        let mut expected = 0u64;
        for tau in 0..2 * s {
            let k = tau % s;
            let level = k.min(s - k) as u64;
            expected += city.base.iter().zip(&city.scale).map(|(&b, &a)| u64::from(b) + u64::from(a) * level).sum::<u64>();
        }
        assert_eq!(city.analytic_total(), Some(expected));
        assert_eq!(city.truth.total(), expected);
        assert_eq!(city.trips.len() as u64, expected);
        assert_eq!(city.truth.matrix(3), city.truth.matrix(3 + s));
    }

    #[test]
    fn trips_land_in_their_tiles() {
        let city = generate_synthetic_city(spec(1)).unwrap();
        let rebuilt = crate::flows::build_od_tensor(&city.trips, &city.tessellation, *city.truth.axis()).unwrap();
        assert_eq!(rebuilt.skips.skipped(), 0);
        assert_eq!(rebuilt.tensor, city.truth);
    }

    #[test]
    fn deterministic_and_validated() {
        let a = generate_synthetic_city(spec(1)).unwrap();
        let b = generate_synthetic_city(spec(1)).unwrap();
        assert_eq!(a.trips, b.trips);
        assert!(generate_synthetic_city(SyntheticSpec { n_tiles: 1, ..spec(0) }).is_err());
        assert!(generate_synthetic_city(SyntheticSpec { days: 1, ..spec(0) }).is_err());
        assert!(generate_synthetic_city(SyntheticSpec { interval_seconds: 7000, ..spec(0) }).is_err());
    }
}
