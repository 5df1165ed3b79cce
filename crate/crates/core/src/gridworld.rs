//! Occupancy grid, world/grid transforms and planar ray casting.
//!
//! Cell `(0, 0)` sits at `origin`; cell `(i, j)` covers
//! `[origin.x + i*res, origin.x + (i+1)*res) x [origin.y + j*res, ...)`.
//! Column index `i` grows with world x, row index `j` with world y.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RESOLUTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimensions must be positive (got {width} x {height})")]
    EmptyGrid { width: usize, height: usize },
    #[error("grid resolution must be positive (got {0})")]
    BadResolution(f64),
    #[error("cell buffer has {got} entries, expected {expected}")]
    CellCount { expected: usize, got: usize },
    #[error("pgm parse error: {0}")]
    Pgm(String),
}

/// 2D world position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
}

impl Cell {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// Result of mapping a world point onto the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridLookup {
    Inside(Cell),
    OutOfBounds,
}

impl GridLookup {
    pub fn cell(self) -> Option<Cell> {
        match self {
            GridLookup::Inside(c) => Some(c),
            GridLookup::OutOfBounds => None,
        }
    }
}

/// Axis-aligned rectangle used by scenario files to paint obstacles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_m: [f64; 2],
    pub max_m: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point2,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new_empty(width: usize, height: usize, resolution: f64, origin: Point2) -> Result<Self, GridError> {
        Self::from_cells(width, height, resolution, origin, vec![false; width * height])
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point2,
        occupied: Vec<bool>,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::EmptyGrid { width, height });
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(GridError::BadResolution(resolution));
        }
        if occupied.len() != width * height {
            return Err(GridError::CellCount { expected: width * height, got: occupied.len() });
        }
        Ok(Self { width, height, resolution, origin, occupied })
    }

    /// Builds a grid covering `width_m x height_m`, optionally walled, with
    /// every cell whose center falls inside one of `rects` marked occupied.
    pub fn from_rects(
        width_m: f64,
        height_m: f64,
        resolution: f64,
        origin: Point2,
        border: bool,
        rects: &[Rect],
    ) -> Result<Self, GridError> {
        if !(resolution > 0.0) {
            return Err(GridError::BadResolution(resolution));
        }
        let width = (width_m / resolution).round() as usize;
        let height = (height_m / resolution).round() as usize;
        let mut grid = Self::new_empty(width, height, resolution, origin)?;
        for j in 0..height {
            for i in 0..width {
                let c = grid.cell_center(Cell::new(i, j));
                let edge = i == 0 || j == 0 || i + 1 == width || j + 1 == height;
                let hit = rects
                    .iter()
                    .any(|r| c.x >= r.min_m[0] && c.x <= r.max_m[0] && c.y >= r.min_m[1] && c.y <= r.max_m[1]);
                if hit || (border && edge) {
                    grid.set_occupied(Cell::new(i, j), true);
                }
            }
        }
        Ok(grid)
    }

    /// Parses an ASCII portable graymap (`P2`). The first raster row is the
    /// top of the map (highest y). Pixels darker than half of `maxval` are
    /// occupied.
    pub fn from_pgm(text: &str, resolution: f64, origin: Point2) -> Result<Self, GridError> {
        let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
        let magic = tokens.next().ok_or_else(|| GridError::Pgm("empty file".into()))?;
        if magic != "P2" {
            return Err(GridError::Pgm(format!("expected magic P2, found {magic:?}")));
        }
        let mut next_num = |what: &str| -> Result<u32, GridError> {
            let tok = tokens.next().ok_or_else(|| GridError::Pgm(format!("missing {what}")))?;
            tok.parse::<u32>().map_err(|_| GridError::Pgm(format!("bad {what}: {tok:?}")))
        };
        let width = next_num("width")? as usize;
        let height = next_num("height")? as usize;
        let maxval = next_num("maxval")?;
        if maxval == 0 {
            return Err(GridError::Pgm("maxval must be positive".into()));
        }
        let mut occupied = vec![false; width * height];
        for row in 0..height {
            let j = height - 1 - row;
            for i in 0..width {
                let v = next_num("pixel")?;
                occupied[j * width + i] = (v as f64) < maxval as f64 / 2.0;
            }
        }
        Self::from_cells(width, height, resolution, origin, occupied)
    }

    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in 0..self.height {
            let j = self.height - 1 - row;
            let line: Vec<&str> =
                (0..self.width).map(|i| if self.occupied[self.index(Cell::new(i, j))] { "0" } else { "255" }).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn index(&self, c: Cell) -> usize {
        c.j * self.width + c.i
    }

    pub fn cell_of_index(&self, idx: usize) -> Cell {
        Cell::new(idx % self.width, idx / self.width)
    }

    pub fn in_bounds(&self, i: isize, j: isize) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        self.occupied[self.index(c)]
    }

    pub fn set_occupied(&mut self, c: Cell, occ: bool) {
        let idx = self.index(c);
        self.occupied[idx] = occ;
    }

    pub fn cells(&self) -> &[bool] {
        &self.occupied
    }

    pub fn world_to_grid(&self, p: Point2) -> GridLookup {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if !fx.is_finite() || !fy.is_finite() || fx < 0.0 || fy < 0.0 {
            return GridLookup::OutOfBounds;
        }
        let (i, j) = (fx as usize, fy as usize);
        if i >= self.width || j >= self.height {
            return GridLookup::OutOfBounds;
        }
        GridLookup::Inside(Cell::new(i, j))
    }

    pub fn grid_to_world(&self, c: Cell) -> Point2 {
        self.cell_center(c)
    }

    pub fn cell_center(&self, c: Cell) -> Point2 {
        Point2::new(
            self.origin.x + (c.i as f64 + 0.5) * self.resolution,
            self.origin.y + (c.j as f64 + 0.5) * self.resolution,
        )
    }

    /// Occupancy at a world point; points off the map count as free.
    pub fn occupied_at(&self, p: Point2) -> bool {
        match self.world_to_grid(p) {
            GridLookup::Inside(c) => self.is_occupied(c),
            GridLookup::OutOfBounds => false,
        }
    }

    pub fn same_extents(&self, other: &OccupancyGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.resolution == other.resolution
            && self.origin == other.origin
    }

    /// Distance along a ray to the first occupied cell boundary, found with
    /// an exact voxel walk. `None` when nothing is hit within `max_range`.
    pub fn ray_to_occupied(&self, from: Point2, angle: f64, max_range: f64) -> Option<f64> {
        let (dx, dy) = (angle.cos(), angle.sin());
        let res = self.resolution;
        // Local grid coordinates in cell units.
        let gx = (from.x - self.origin.x) / res;
        let gy = (from.y - self.origin.y) / res;
        let w = self.width as f64;
        let h = self.height as f64;

        // Clip the ray to the grid box first.
        let mut t_enter = 0.0_f64;
        let mut t_exit = max_range / res;
        for (g, d, hi) in [(gx, dx, w), (gy, dy, h)] {
            if d.abs() < 1e-15 {
                if g < 0.0 || g >= hi {
                    return None;
                }
            } else {
                let t0 = (0.0 - g) / d;
                let t1 = (hi - g) / d;
                let (lo, up) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                t_enter = t_enter.max(lo);
                t_exit = t_exit.min(up);
            }
        }
        if t_enter > t_exit {
            return None;
        }

        let sx = gx + dx * t_enter;
        let sy = gy + dy * t_enter;
        let mut ci = (sx.floor() as isize).clamp(0, self.width as isize - 1);
        let mut cj = (sy.floor() as isize).clamp(0, self.height as isize - 1);
        let step_i: isize = if dx > 0.0 { 1 } else { -1 };
        let step_j: isize = if dy > 0.0 { 1 } else { -1 };
        let t_delta_x = if dx.abs() < 1e-15 { f64::INFINITY } else { 1.0 / dx.abs() };
        let t_delta_y = if dy.abs() < 1e-15 { f64::INFINITY } else { 1.0 / dy.abs() };
        let mut t_max_x = if dx.abs() < 1e-15 {
            f64::INFINITY
        } else if dx > 0.0 {
            t_enter + ((ci + 1) as f64 - sx) / dx
        } else {
            t_enter + (ci as f64 - sx) / dx
        };
        let mut t_max_y = if dy.abs() < 1e-15 {
            f64::INFINITY
        } else if dy > 0.0 {
            t_enter + ((cj + 1) as f64 - sy) / dy
        } else {
            t_enter + (cj as f64 - sy) / dy
        };
        let mut t_cur = t_enter;
        loop {
            if t_cur > t_exit {
                return None;
            }
            if self.occupied[cj as usize * self.width + ci as usize] {
                return Some(t_cur * res);
            }
            if t_max_x < t_max_y {
                t_cur = t_max_x;
                t_max_x += t_delta_x;
                ci += step_i;
            } else {
                t_cur = t_max_y;
                t_max_y += t_delta_y;
                cj += step_j;
            }
            if !self.in_bounds(ci, cj) {
                return None;
            }
        }
    }
}

/// Analytic ray/circle intersection; `None` when the ray misses.
/// A ray starting inside the circle hits at distance 0.
pub fn ray_circle(from: Point2, angle: f64, center: Point2, radius: f64) -> Option<f64> {
    let d = Point2::new(angle.cos(), angle.sin());
    let f = from.sub(center);
    let c = f.dot(f) - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = f.dot(d);
    if b >= 0.0 {
        return None;
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    Some(-b - disc.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub hit: bool,
}

/// Casts one ray against the grid and a set of circles, returning the nearest hit.
pub fn raycast(origin: Point2, angle: f64, max_range: f64, grid: &OccupancyGrid, circles: &[(Point2, f64)]) -> RayHit {
    let mut best = grid.ray_to_occupied(origin, angle, max_range);
    for &(center, radius) in circles {
        if let Some(t) = ray_circle(origin, angle, center, radius) {
            if t <= max_range && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    }
    match best {
        Some(d) if d <= max_range => RayHit { distance: d, hit: true },
        _ => RayHit { distance: max_range, hit: false },
    }
}
