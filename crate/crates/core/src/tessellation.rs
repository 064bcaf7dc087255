//! Spatial tessellations: regular square grids and irregular polygon sets.
//!
//! A tessellation is a finite, ordered list of tiles over a region. Tiles are
//! addressed by a dense index in `[0, n)`; each tile also carries a string
//! label (the GeoJSON `id` property for polygon sets, the decimal index for
//! grids) used by the OD-count ingestion path and tensor CSV files.
//!
//! Coordinates are plain lon/lat degrees. No projection is applied.

use std::collections::HashMap;

use geo::{Area, BooleanOps, Coord, LineString, MultiPolygon, Polygon};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Default tolerance for overlap and coverage checks, in square degrees.
pub const DEFAULT_AREA_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TessellationError {
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("malformed GeoJSON: {0}")]
    Malformed(String),
    #[error("duplicate tile identifier {0:?}")]
    DuplicateId(String),
    #[error("feature {index} has unsupported geometry type {kind:?} (only Polygon is accepted)")]
    NonPolygon { index: usize, kind: String },
    #[error("a tessellation needs at least one tile")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

/// Axis-aligned lon/lat rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    /// Builds a rectangle, rejecting non-finite corners and zero or negative extent.
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self, TessellationError> {
        let b = Self { min_lon, min_lat, max_lon, max_lat };
        if ![min_lon, min_lat, max_lon, max_lat].iter().all(|v| v.is_finite()) {
            return Err(TessellationError::DegenerateRegion(format!("non-finite corner in {b:?}")));
        }
        if max_lon <= min_lon || max_lat <= min_lat {
            return Err(TessellationError::DegenerateRegion(format!(
                "({min_lon}, {min_lat})-({max_lon}, {max_lat}) has no area"
            )));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.max_lon - self.min_lon
    }

    pub fn height(&self) -> f64 {
        self.max_lat - self.min_lat
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Left-closed, right-open membership in both axes.
    pub fn contains_half_open(&self, p: LonLat) -> bool {
        p.lon >= self.min_lon && p.lon < self.max_lon && p.lat >= self.min_lat && p.lat < self.max_lat
    }

    pub fn contains_closed(&self, p: LonLat) -> bool {
        p.lon >= self.min_lon && p.lon <= self.max_lon && p.lat >= self.min_lat && p.lat <= self.max_lat
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.min_lon < other.max_lon
            && other.min_lon < self.max_lon
            && self.min_lat < other.max_lat
            && other.min_lat < self.max_lat
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.max_lon.min(other.max_lon) - self.min_lon.max(other.min_lon);
        let h = self.max_lat.min(other.max_lat) - self.min_lat.max(other.min_lat);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    pub fn center(&self) -> LonLat {
        LonLat::new((self.min_lon + self.max_lon) / 2.0, (self.min_lat + self.max_lat) / 2.0)
    }

    fn to_polygon(self) -> Polygon<f64> {
        geo::Rect::new(
            Coord { x: self.min_lon, y: self.min_lat },
            Coord { x: self.max_lon, y: self.max_lat },
        )
        .to_polygon()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TileGeometry {
    /// Grid cell; `rect` is the full (unclipped) cell extent.
    Cell { row: usize, col: usize, rect: BBox },
    /// Closed rings (first vertex repeated last); holes are optional.
    Polygon { exterior: Vec<LonLat>, holes: Vec<Vec<LonLat>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub id: usize,
    pub label: String,
    pub geometry: TileGeometry,
}

impl Tile {
    /// Polygon tile from an exterior ring; the ring is closed if it is not already.
    pub fn polygon(id: usize, label: impl Into<String>, mut exterior: Vec<LonLat>) -> Self {
        close_ring(&mut exterior);
        Self { id, label: label.into(), geometry: TileGeometry::Polygon { exterior, holes: Vec::new() } }
    }

    pub fn bbox(&self) -> Option<BBox> {
        match &self.geometry {
            TileGeometry::Cell { rect, .. } => Some(*rect),
            TileGeometry::Polygon { exterior, .. } => ring_bbox(exterior),
        }
    }

    /// Closed-region membership (boundary counts as inside).
    pub fn contains(&self, p: LonLat) -> bool {
        match &self.geometry {
            TileGeometry::Cell { rect, .. } => rect.contains_closed(p),
            TileGeometry::Polygon { exterior, holes } => polygon_contains(exterior, holes, p),
        }
    }

    fn to_geo(&self) -> Polygon<f64> {
        match &self.geometry {
            TileGeometry::Cell { rect, .. } => rect.to_polygon(),
            TileGeometry::Polygon { exterior, holes } => Polygon::new(
                ring_to_geo(exterior),
                holes.iter().map(|h| ring_to_geo(h)).collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TessellationKind {
    RegularGrid,
    Irregular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct GridLayout {
    rows: usize,
    cols: usize,
    cell_size: f64,
}

/// Immutable set of tiles over a region.
#[derive(Debug, Clone, PartialEq)]
pub struct Tessellation {
    region: BBox,
    tiles: Vec<Tile>,
    kind: TessellationKind,
    grid: Option<GridLayout>,
    /// False when the region is just the tiles' bounding box (loaded polygon sets).
    region_declared: bool,
    labels: HashMap<String, usize>,
}

impl Tessellation {
    /// Irregular tessellation over an explicitly declared region.
    ///
    /// Tile ids are reassigned to their position in `tiles`.
    pub fn from_tiles(region: BBox, tiles: Vec<Tile>) -> Result<Self, TessellationError> {
        Self::assemble(region, tiles, TessellationKind::Irregular, None, true)
    }

    fn assemble(
        region: BBox,
        mut tiles: Vec<Tile>,
        kind: TessellationKind,
        grid: Option<GridLayout>,
        region_declared: bool,
    ) -> Result<Self, TessellationError> {
        if tiles.is_empty() {
            return Err(TessellationError::Empty);
        }
        let mut labels = HashMap::with_capacity(tiles.len());
        for (i, tile) in tiles.iter_mut().enumerate() {
            tile.id = i;
            if labels.insert(tile.label.clone(), i).is_some() {
                return Err(TessellationError::DuplicateId(tile.label.clone()));
            }
        }
        Ok(Self { region, tiles, kind, grid, region_declared, labels })
    }

    pub fn region(&self) -> BBox {
        self.region
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn kind(&self) -> TessellationKind {
        self.kind
    }

    /// `(rows, cols)` for regular grids.
    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        self.grid.map(|g| (g.rows, g.cols))
    }

    pub fn tile_by_label(&self, label: &str) -> Option<usize> {
        self.labels.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.tiles[id].label
    }

    /// Maps a point to the single tile that owns it, if any.
    ///
    /// Grid cells are left-closed and right-open in both axes, so a point on a
    /// shared edge belongs to the cell east/north of it. Points outside the
    /// region (including the region's own east and north edges) map to `None`.
    /// Polygon sets return the first tile, in id order, whose closed region
    /// contains the point.
    pub fn locate(&self, p: LonLat) -> Option<usize> {
        if !(p.lon.is_finite() && p.lat.is_finite()) {
            return None;
        }
        match self.grid {
            Some(g) => {
                if !self.region.contains_half_open(p) {
                    return None;
                }
                let col = (((p.lon - self.region.min_lon) / g.cell_size).floor() as usize).min(g.cols - 1);
                let row = (((p.lat - self.region.min_lat) / g.cell_size).floor() as usize).min(g.rows - 1);
                Some(row * g.cols + col)
            }
            None => self
                .tiles
                .iter()
                .find(|t| t.bbox().is_some_and(|b| b.contains_closed(p)) && t.contains(p))
                .map(|t| t.id),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with(DEFAULT_AREA_EPSILON)
    }

    /// Checks tile validity, pairwise overlap and coverage of the region.
    pub fn validate_with(&self, area_epsilon: f64) -> ValidationReport {
        let mut report = ValidationReport::default();

        let mut valid = vec![true; self.tiles.len()];
        for tile in &self.tiles {
            if let Some(reason) = tile_defect(tile) {
                valid[tile.id] = false;
                report.invalid_tiles.push(InvalidTile { tile: tile.id, reason });
            }
        }

        let boxes: Vec<Option<BBox>> = self.tiles.iter().map(Tile::bbox).collect();
        let geoms: Vec<Option<Polygon<f64>>> = match self.kind {
            TessellationKind::RegularGrid => vec![None; self.tiles.len()],
            TessellationKind::Irregular => self
                .tiles
                .iter()
                .zip(&valid)
                .map(|(t, ok)| ok.then(|| t.to_geo()))
                .collect(),
        };

        for a in 0..self.tiles.len() {
            let (Some(ba), true) = (boxes[a], valid[a]) else { continue };
            for b in a + 1..self.tiles.len() {
                let (Some(bb), true) = (boxes[b], valid[b]) else { continue };
                if !ba.intersects(&bb) {
                    continue;
                }
                let area = match (&geoms[a], &geoms[b]) {
                    (Some(ga), Some(gb)) => ga.intersection(gb).unsigned_area(),
                    _ => ba.intersection_area(&bb),
                };
                if area > area_epsilon {
                    report.overlaps.push(Overlap { first: a, second: b, area });
                }
            }
        }

        if self.region_declared {
            let covered = match self.kind {
                TessellationKind::RegularGrid => {
                    boxes.iter().flatten().map(|b| b.intersection_area(&self.region)).sum::<f64>()
                }
                TessellationKind::Irregular => {
                    let union = geoms
                        .iter()
                        .flatten()
                        .fold(MultiPolygon::<f64>::new(Vec::new()), |acc, g| acc.union(g));
                    union.intersection(&self.region.to_polygon()).unsigned_area()
                }
            };
            let gap = self.region.area() - covered;
            if gap > area_epsilon {
                report.coverage_gap = Some(gap);
            }
        }
        report
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub first: usize,
    pub second: usize,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidTile {
    pub tile: usize,
    pub reason: String,
}

/// Findings of [`Tessellation::validate`]; empty when every property holds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub invalid_tiles: Vec<InvalidTile>,
    pub overlaps: Vec<Overlap>,
    /// Region area not covered by any tile, when above the tolerance.
    pub coverage_gap: Option<f64>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.invalid_tiles.is_empty() && self.overlaps.is_empty() && self.coverage_gap.is_none()
    }

    pub fn violation_count(&self) -> usize {
        self.invalid_tiles.len() + self.overlaps.len() + usize::from(self.coverage_gap.is_some())
    }
}

/// Regular square grid over `region`, ids row-major from the south-west cell.
///
/// The grid has `ceil(width / cell_size)` columns and `ceil(height / cell_size)`
/// rows, so the last column/row may overhang the region's east/north edge.
/// Ratios within floating-point noise of an integer count as that integer, so
/// a 0.1-degree region in 0.05-degree cells has two columns, not three.
pub fn build_square_grid(region: BBox, cell_size: f64) -> Result<Tessellation, TessellationError> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(TessellationError::InvalidCellSize(cell_size));
    }
    let region = BBox::new(region.min_lon, region.min_lat, region.max_lon, region.max_lat)?;
    let cols = cell_count(region.width(), cell_size);
    let rows = cell_count(region.height(), cell_size);
    let mut tiles = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let min_lon = region.min_lon + col as f64 * cell_size;
            let min_lat = region.min_lat + row as f64 * cell_size;
            let mut rect = BBox { min_lon, min_lat, max_lon: min_lon + cell_size, max_lat: min_lat + cell_size };
            if col + 1 == cols {
                rect.max_lon = rect.max_lon.max(region.max_lon);
            }
            if row + 1 == rows {
                rect.max_lat = rect.max_lat.max(region.max_lat);
            }
            let id = row * cols + col;
            tiles.push(Tile { id, label: id.to_string(), geometry: TileGeometry::Cell { row, col, rect } });
        }
    }
    Tessellation::assemble(
        region,
        tiles,
        TessellationKind::RegularGrid,
        Some(GridLayout { rows, cols, cell_size }),
        true,
    )
}

fn cell_count(extent: f64, cell_size: f64) -> usize {
    let ratio = extent / cell_size;
    let nearest = ratio.round();
    let k = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { ratio.ceil() };
    (k as usize).max(1)
}

/// Parses a GeoJSON FeatureCollection of Polygon features into an irregular tessellation.
///
/// Each feature needs a `properties.id` (string or number) that is unique in
/// the document. Tiles keep document order; the region is the bounding box of
/// all tiles.
pub fn load_polygon_tessellation(geojson: &str) -> Result<Tessellation, TessellationError> {
    let doc: Value = serde_json::from_str(geojson).map_err(|e| TessellationError::Malformed(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(TessellationError::Malformed("top-level type must be FeatureCollection".into()));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| TessellationError::Malformed("missing features array".into()))?;

    let mut tiles = Vec::with_capacity(features.len());
    for (index, feature) in features.iter().enumerate() {
        let label = match feature.get("properties").and_then(|p| p.get("id")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => {
                return Err(TessellationError::Malformed(format!(
                    "feature {index} lacks a string or numeric properties.id"
                )))
            }
        };
        let geometry = feature
            .get("geometry")
            .filter(|g| !g.is_null())
            .ok_or_else(|| TessellationError::Malformed(format!("feature {index} has no geometry")))?;
        let kind = geometry.get("type").and_then(Value::as_str).unwrap_or_default();
        if kind != "Polygon" {
            return Err(TessellationError::NonPolygon { index, kind: kind.to_string() });
        }
        let rings = geometry
            .get("coordinates")
            .and_then(Value::as_array)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| TessellationError::Malformed(format!("feature {index} has no polygon rings")))?;
        let mut parsed = rings
            .iter()
            .map(|ring| parse_ring(ring).map_err(|m| TessellationError::Malformed(format!("feature {index}: {m}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let exterior = parsed.remove(0);
        tiles.push(Tile { id: index, label, geometry: TileGeometry::Polygon { exterior, holes: parsed } });
    }
    if tiles.is_empty() {
        return Err(TessellationError::Empty);
    }

    let region = tiles
        .iter()
        .filter_map(Tile::bbox)
        .reduce(|a, b| BBox {
            min_lon: a.min_lon.min(b.min_lon),
            min_lat: a.min_lat.min(b.min_lat),
            max_lon: a.max_lon.max(b.max_lon),
            max_lat: a.max_lat.max(b.max_lat),
        })
        .ok_or(TessellationError::Empty)?;
    let region = BBox::new(region.min_lon, region.min_lat, region.max_lon, region.max_lat)?;
    Tessellation::assemble(region, tiles, TessellationKind::Irregular, None, false)
}

fn parse_ring(ring: &Value) -> Result<Vec<LonLat>, String> {
    let positions = ring.as_array().ok_or("ring is not an array")?;
    let pts = positions
        .iter()
        .map(|pos| {
            let xy = pos.as_array().filter(|a| a.len() >= 2).ok_or("position needs two numbers")?;
            match (xy[0].as_f64(), xy[1].as_f64()) {
                (Some(lon), Some(lat)) => Ok(LonLat::new(lon, lat)),
                _ => Err("position needs two numbers"),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    if pts.len() < 4 {
        return Err(format!("ring has {} positions, need at least 4", pts.len()));
    }
    if pts.first() != pts.last() {
        return Err("ring is not closed".into());
    }
    Ok(pts)
}

fn close_ring(ring: &mut Vec<LonLat>) {
    if let (Some(first), Some(last)) = (ring.first().copied(), ring.last().copied()) {
        if first != last {
            ring.push(first);
        }
    }
}

fn ring_bbox(ring: &[LonLat]) -> Option<BBox> {
    let first = ring.first()?;
    let mut b = BBox { min_lon: first.lon, min_lat: first.lat, max_lon: first.lon, max_lat: first.lat };
    for p in ring {
        b.min_lon = b.min_lon.min(p.lon);
        b.min_lat = b.min_lat.min(p.lat);
        b.max_lon = b.max_lon.max(p.lon);
        b.max_lat = b.max_lat.max(p.lat);
    }
    Some(b)
}

fn ring_to_geo(ring: &[LonLat]) -> LineString<f64> {
    ring.iter().map(|p| Coord { x: p.lon, y: p.lat }).collect()
}

fn tile_defect(tile: &Tile) -> Option<String> {
    match &tile.geometry {
        TileGeometry::Cell { rect, .. } => {
            (!(rect.width() > 0.0 && rect.height() > 0.0)).then(|| "cell has no area".to_string())
        }
        TileGeometry::Polygon { exterior, holes } => {
            for ring in std::iter::once(exterior).chain(holes) {
                if ring.len() < 4 || ring.first() != ring.last() {
                    return Some("ring is not closed".into());
                }
                if ring_self_intersects(ring) {
                    return Some("ring self-intersects".into());
                }
            }
            let area = Polygon::new(ring_to_geo(exterior), Vec::new()).unsigned_area();
            (area <= 0.0).then(|| "polygon has no area".to_string())
        }
    }
}

fn cross(o: LonLat, a: LonLat, b: LonLat) -> f64 {
    (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon)
}

fn on_segment(a: LonLat, b: LonLat, p: LonLat) -> bool {
    cross(a, b, p) == 0.0
        && p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

fn segments_intersect(a: LonLat, b: LonLat, c: LonLat, d: LonLat) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

/// Non-adjacent edge pairs of a closed ring may not touch.
fn ring_self_intersects(ring: &[LonLat]) -> bool {
    let edges = ring.len() - 1;
    for i in 0..edges {
        for j in i + 1..edges {
            let adjacent = j == i + 1 || (i == 0 && j == edges - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

/// Even-odd rule over all rings; points on any ring boundary are inside.
fn polygon_contains(exterior: &[LonLat], holes: &[Vec<LonLat>], p: LonLat) -> bool {
    let rings = || std::iter::once(exterior).chain(holes.iter().map(Vec::as_slice));
    if rings().any(|r| r.windows(2).any(|e| on_segment(e[0], e[1], p))) {
        return true;
    }
    let mut inside = false;
    for ring in rings() {
        for e in ring.windows(2) {
            let (a, b) = (e[0], e[1]);
            if (a.lat > p.lat) != (b.lat > p.lat) {
                let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
                if p.lon < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}
