//! Coordinates, great-circle distance, local planar projection and the voting grid.
//!
//! Angles are expressed in **degrees**, distances in **kilometres**.

use std::fmt;

use thiserror::Error;

/// IUGG mean Earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Length of one degree of arc on the mean-radius sphere.
pub const KM_PER_DEGREE: f64 = std::f64::consts::PI * EARTH_RADIUS_KM / 180.0;

/// Projection distortion grows without bound beyond this distance from the origin.
pub const MAX_PROJECTION_KM: f64 = 1500.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate: lat={lat}, lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("point is {distance_km:.1} km from the projection origin (limit {MAX_PROJECTION_KM} km)")]
    TooFarFromOrigin { distance_km: f64 },
    #[error("point ({lat}, {lon}) lies outside the grid region")]
    OutsideGrid { lat: f64, lon: f64 },
    #[error("cell ({row}, {col}) is outside a {n_rows}x{n_cols} grid")]
    CellOutOfRange { row: usize, col: usize, n_rows: usize, n_cols: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// A latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
            Ok(Self { lat, lon })
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Kilometres east (`x`) and north (`y`) of a projection origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Great-circle distance on the mean-radius sphere.
///
/// Exactly symmetric in its arguments: every intermediate term is either an
/// even function of the coordinate differences or a commutative product.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let half_dlat = (b.lat - a.lat).to_radians() * 0.5;
    let half_dlon = (b.lon - a.lon).to_radians() * 0.5;
    let s_lat = half_dlat.sin();
    let s_lon = half_dlon.sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

fn wrap_degrees(mut d: f64) -> f64 {
    if d > 180.0 {
        d -= 360.0;
    } else if d < -180.0 {
        d += 360.0;
    }
    d
}

/// Equirectangular projection anchored at `origin`.
///
/// Fails for points farther than [`MAX_PROJECTION_KM`] from the origin.
pub fn project(p: GeoPoint, origin: GeoPoint) -> Result<PlanarPoint, GeoError> {
    let distance_km = haversine(p, origin);
    if distance_km > MAX_PROJECTION_KM {
        return Err(GeoError::TooFarFromOrigin { distance_km });
    }
    Ok(project_unchecked(p, origin))
}

fn project_unchecked(p: GeoPoint, origin: GeoPoint) -> PlanarPoint {
    let dlon = wrap_degrees(p.lon - origin.lon);
    PlanarPoint { x: dlon * origin.lat.to_radians().cos() * KM_PER_DEGREE, y: (p.lat - origin.lat) * KM_PER_DEGREE }
}

/// Inverse of [`project`]. Results are clamped/wrapped back into valid coordinate ranges.
pub fn unproject(q: PlanarPoint, origin: GeoPoint) -> GeoPoint {
    let lat = (origin.lat + q.y / KM_PER_DEGREE).clamp(-90.0, 90.0);
    let cos_lat = origin.lat.to_radians().cos();
    let lon =
        if cos_lat.abs() < 1e-12 { origin.lon } else { wrap_degrees(origin.lon + q.x / (KM_PER_DEGREE * cos_lat)) };
    GeoPoint { lat, lon: lon.clamp(-180.0, 180.0) }
}

/// Row/column index of a grid cell. Row 0 is the southernmost band, column 0 the westernmost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// A regular lat/lon grid anchored at its south-west corner.
///
/// Cells are half-open: the south and west edges belong to a cell, the north and
/// east edges to its neighbour. The outer north/east boundary of the grid is
/// closed so every point of the bounding box maps to exactly one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    origin: GeoPoint,
    cell_size_km: f64,
    lat_step: f64,
    lon_step: f64,
    n_rows: usize,
    n_cols: usize,
}

impl Grid {
    /// Cells of `cell_size_km` north-south; the east-west step is sized to the same
    /// length at the grid's middle latitude.
    pub fn new(origin: GeoPoint, cell_size_km: f64, n_rows: usize, n_cols: usize) -> Result<Self, GeoError> {
        if !(cell_size_km.is_finite() && cell_size_km > 0.0) {
            return Err(GeoError::InvalidGrid(format!("cell size must be positive, got {cell_size_km}")));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(GeoError::InvalidGrid("grid needs at least one row and column".into()));
        }
        let lat_step = cell_size_km / KM_PER_DEGREE;
        let mid_lat = origin.lat + lat_step * n_rows as f64 / 2.0;
        let lon_step = lon_step_at(cell_size_km, mid_lat)?;
        Self::build(origin, cell_size_km, lat_step, lon_step, n_rows, n_cols)
    }

    /// The smallest grid of `cell_size_km` cells anchored at `south_west` that covers `north_east`.
    pub fn covering(south_west: GeoPoint, north_east: GeoPoint, cell_size_km: f64) -> Result<Self, GeoError> {
        if north_east.lat < south_west.lat || north_east.lon < south_west.lon {
            return Err(GeoError::InvalidGrid("north-east corner lies south or west of the origin".into()));
        }
        if !(cell_size_km.is_finite() && cell_size_km > 0.0) {
            return Err(GeoError::InvalidGrid(format!("cell size must be positive, got {cell_size_km}")));
        }
        let lat_step = cell_size_km / KM_PER_DEGREE;
        let mid_lat = (south_west.lat + north_east.lat) / 2.0;
        let lon_step = lon_step_at(cell_size_km, mid_lat)?;
        let n_rows = whole_cells(north_east.lat - south_west.lat, lat_step);
        let n_cols = whole_cells(north_east.lon - south_west.lon, lon_step);
        Self::build(south_west, cell_size_km, lat_step, lon_step, n_rows, n_cols)
    }

    /// Splits the box `[south_west, north_east]` into `n_rows × n_cols` equal cells.
    /// A zero-extent box yields zero-size cells whose centre is the origin.
    pub fn from_bbox(
        south_west: GeoPoint,
        north_east: GeoPoint,
        n_rows: usize,
        n_cols: usize,
    ) -> Result<Self, GeoError> {
        if n_rows == 0 || n_cols == 0 {
            return Err(GeoError::InvalidGrid("grid needs at least one row and column".into()));
        }
        if north_east.lat < south_west.lat || north_east.lon < south_west.lon {
            return Err(GeoError::InvalidGrid("north-east corner lies south or west of the origin".into()));
        }
        let lat_step = (north_east.lat - south_west.lat) / n_rows as f64;
        let lon_step = (north_east.lon - south_west.lon) / n_cols as f64;
        let cell_size_km = lat_step * KM_PER_DEGREE;
        Self::build(south_west, cell_size_km, lat_step, lon_step, n_rows, n_cols)
    }

    fn build(
        origin: GeoPoint,
        cell_size_km: f64,
        lat_step: f64,
        lon_step: f64,
        n_rows: usize,
        n_cols: usize,
    ) -> Result<Self, GeoError> {
        let grid = Self { origin, cell_size_km, lat_step, lon_step, n_rows, n_cols };
        let (north, east) = (grid.lat_edge(n_rows), grid.lon_edge(n_cols));
        if north > 90.0 || east > 180.0 {
            return Err(GeoError::InvalidGrid(format!("grid extends to ({north}, {east}), beyond valid coordinates")));
        }
        Ok(grid)
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn cell_size_km(&self) -> f64 {
        self.cell_size_km
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn lat_step(&self) -> f64 {
        self.lat_step
    }

    pub fn lon_step(&self) -> f64 {
        self.lon_step
    }

    /// Southern edge of row `row` (row `n_rows` gives the northern boundary).
    pub fn lat_edge(&self, row: usize) -> f64 {
        self.origin.lat + row as f64 * self.lat_step
    }

    /// Western edge of column `col` (column `n_cols` gives the eastern boundary).
    pub fn lon_edge(&self, col: usize) -> f64 {
        self.origin.lon + col as f64 * self.lon_step
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.origin.lat
            && p.lat <= self.lat_edge(self.n_rows)
            && p.lon >= self.origin.lon
            && p.lon <= self.lon_edge(self.n_cols)
    }

    pub fn cell_of(&self, p: GeoPoint) -> Result<CellIndex, GeoError> {
        if !self.contains(p) {
            return Err(GeoError::OutsideGrid { lat: p.lat, lon: p.lon });
        }
        let row = locate(p.lat, self.n_rows, |i| self.lat_edge(i), self.origin.lat, self.lat_step);
        let col = locate(p.lon, self.n_cols, |i| self.lon_edge(i), self.origin.lon, self.lon_step);
        Ok(CellIndex { row, col })
    }

    pub fn cell_center(&self, idx: CellIndex) -> Result<GeoPoint, GeoError> {
        self.check_index(idx)?;
        Ok(GeoPoint {
            lat: self.origin.lat + (idx.row as f64 + 0.5) * self.lat_step,
            lon: self.origin.lon + (idx.col as f64 + 0.5) * self.lon_step,
        })
    }

    /// South-west and north-east corners of a cell.
    pub fn cell_bounds(&self, idx: CellIndex) -> Result<(GeoPoint, GeoPoint), GeoError> {
        self.check_index(idx)?;
        Ok((
            GeoPoint { lat: self.lat_edge(idx.row), lon: self.lon_edge(idx.col) },
            GeoPoint { lat: self.lat_edge(idx.row + 1), lon: self.lon_edge(idx.col + 1) },
        ))
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.n_rows).flat_map(move |row| (0..self.n_cols).map(move |col| CellIndex { row, col }))
    }

    fn check_index(&self, idx: CellIndex) -> Result<(), GeoError> {
        if idx.row < self.n_rows && idx.col < self.n_cols {
            Ok(())
        } else {
            Err(GeoError::CellOutOfRange { row: idx.row, col: idx.col, n_rows: self.n_rows, n_cols: self.n_cols })
        }
    }
}

fn lon_step_at(cell_size_km: f64, lat: f64) -> Result<f64, GeoError> {
    let cos = lat.to_radians().cos();
    if cos <= 1e-6 {
        return Err(GeoError::InvalidGrid(format!("cannot size cells at latitude {lat}")));
    }
    Ok(cell_size_km / (KM_PER_DEGREE * cos))
}

fn whole_cells(span: f64, step: f64) -> usize {
    ((span / step).ceil() as usize).max(1)
}

// The edge function is authoritative: the division only provides a first guess,
// which is then nudged so that `edge(i) <= v < edge(i + 1)` holds exactly.
fn locate(v: f64, n: usize, edge: impl Fn(usize) -> f64, start: f64, step: f64) -> usize {
    if step <= 0.0 {
        return 0;
    }
    let guess = ((v - start) / step).floor();
    let mut i = if guess.is_finite() && guess > 0.0 { (guess as usize).min(n - 1) } else { 0 };
    while i + 1 < n && v >= edge(i + 1) {
        i += 1;
    }
    while i > 0 && v < edge(i) {
        i -= 1;
    }
    i
}
