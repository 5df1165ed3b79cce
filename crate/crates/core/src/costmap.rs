//! Layered costmap: static (lethal) layer, linear inflation layer and the
//! user preference field (UPF) layer, composed by per-cell maximum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{Cell, GridLookup, OccupancyGrid, Point2};

pub const LETHAL: u8 = 254;
pub const INSCRIBED: u8 = 253;
pub const DEFAULT_INFLATION_RADIUS: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum CostmapError {
    #[error("robot coincides with the preference point (d_r = {0})")]
    DegenerateGeometry(f64),
    #[error("preference point ({x}, {y}) lies outside the map")]
    PreferenceOutOfBounds { x: f64, y: f64 },
    #[error("density {p} outside [{p_min}, {p_max}]")]
    DensityOutOfRange { p: f64, p_min: f64, p_max: f64 },
    #[error("invalid cost range: need 0 <= c_min < c_max <= 254 (got {c_min}, {c_max})")]
    BadCostRange { c_min: u8, c_max: u8 },
    #[error("layer extents differ")]
    ExtentMismatch,
}

/// Per-cell traversal cost; 254 is lethal.
#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point2,
    cost: Vec<u8>,
}

impl Costmap {
    pub fn zeros_like(grid: &OccupancyGrid) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            resolution: grid.resolution(),
            origin: grid.origin(),
            cost: vec![0; grid.len()],
        }
    }

    /// Static layer: lethal on occupied cells, free elsewhere.
    pub fn static_layer(grid: &OccupancyGrid) -> Self {
        let mut map = Self::zeros_like(grid);
        for (c, &occ) in map.cost.iter_mut().zip(grid.cells()) {
            if occ {
                *c = LETHAL;
            }
        }
        map
    }

    /// Inflation layer: cost falls linearly from 253 at an obstacle's
    /// boundary to 0 at `radius`. Occupied cells themselves are left at 0;
    /// they come from the static layer.
    pub fn inflation_layer(grid: &OccupancyGrid, radius: f64) -> Self {
        let mut map = Self::zeros_like(grid);
        let res = grid.resolution();
        let reach = (radius / res).ceil() as isize + 1;
        let (w, h) = (grid.width() as isize, grid.height() as isize);
        // Distance from each cell center to the nearest obstacle boundary,
        // stamped from obstacle cells that touch free space.
        let mut dist = vec![f64::INFINITY; grid.len()];
        for idx in 0..grid.len() {
            if !grid.cells()[idx] {
                continue;
            }
            let oc = grid.cell_of_index(idx);
            let (oi, oj) = (oc.i as isize, oc.j as isize);
            let frontier = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(di, dj)| {
                let (ni, nj) = (oi + di, oj + dj);
                grid.in_bounds(ni, nj) && !grid.cells()[(nj * w + ni) as usize]
            });
            if !frontier {
                continue;
            }
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    let (ni, nj) = (oi + di, oj + dj);
                    if ni < 0 || nj < 0 || ni >= w || nj >= h {
                        continue;
                    }
                    let k = (nj * w + ni) as usize;
                    if grid.cells()[k] {
                        continue;
                    }
                    // nearest point of the obstacle square to the cell center
                    let gx = (di.abs() as f64 - 0.5).max(0.0);
                    let gy = (dj.abs() as f64 - 0.5).max(0.0);
                    let d = gx.hypot(gy) * res;
                    if d < dist[k] {
                        dist[k] = d;
                    }
                }
            }
        }
        for (c, d) in map.cost.iter_mut().zip(dist) {
            if d < radius {
                *c = (f64::from(INSCRIBED) * (1.0 - d / radius)).round() as u8;
            }
        }
        map
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
        self.cost.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cost.is_empty()
    }

    pub fn costs(&self) -> &[u8] {
        &self.cost
    }

    pub fn index(&self, c: Cell) -> usize {
        c.j * self.width + c.i
    }

    pub fn cell_of_index(&self, idx: usize) -> Cell {
        Cell::new(idx % self.width, idx / self.width)
    }

    pub fn get(&self, c: Cell) -> u8 {
        self.cost[self.index(c)]
    }

    pub fn set(&mut self, c: Cell, v: u8) {
        let k = self.index(c);
        self.cost[k] = v;
    }

    pub fn is_lethal(&self, c: Cell) -> bool {
        self.get(c) >= LETHAL
    }

    pub fn in_bounds(&self, i: isize, j: isize) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    pub fn cell_center(&self, c: Cell) -> Point2 {
        Point2::new(
            self.origin.x + (c.i as f64 + 0.5) * self.resolution,
            self.origin.y + (c.j as f64 + 0.5) * self.resolution,
        )
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

    pub fn same_extents(&self, o: &Costmap) -> bool {
        self.width == o.width && self.height == o.height && self.resolution == o.resolution && self.origin == o.origin
    }

    /// ASCII dump: a header line `width height resolution origin_x origin_y`
    /// followed by one line per row (row 0 first), one integer per cell.
    pub fn to_ascii(&self) -> String {
        let mut out =
            format!("{} {} {} {} {}\n", self.width, self.height, self.resolution, self.origin.x, self.origin.y);
        for row in self.cost.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Max-pooled patch no larger than `max_side` cells per side.
    pub fn downsample(&self, max_side: usize) -> CostPatch {
        let factor = self.width.max(self.height).div_ceil(max_side.max(1)).max(1);
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        let mut cost = vec![0u8; w * h];
        for j in 0..self.height {
            for i in 0..self.width {
                let k = (j / factor) * w + i / factor;
                cost[k] = cost[k].max(self.cost[j * self.width + i]);
            }
        }
        CostPatch {
            width: w,
            height: h,
            resolution_m: self.resolution * factor as f64,
            origin_m: [self.origin.x, self.origin.y],
            cost,
        }
    }
}

/// Downsampled costmap shipped to bridge clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPatch {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    pub origin_m: [f64; 2],
    pub cost: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpfMode {
    /// Density clamped to its peak value inside `d <= sigma`, giving a
    /// disk-shaped valley around the preference point.
    #[default]
    Disk,
    /// The Rayleigh-shaped density used verbatim (cheapest on the ring d = sigma).
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpfParams {
    pub preference_point: Point2,
    pub robot_position: Point2,
    pub c_min: u8,
    pub c_max: u8,
    pub mode: UpfMode,
}

impl UpfParams {
    pub const DEFAULT_C_MIN: u8 = 0;
    pub const DEFAULT_C_MAX: u8 = 150;

    pub fn new(preference_point: Point2, robot_position: Point2) -> Self {
        Self {
            preference_point,
            robot_position,
            c_min: Self::DEFAULT_C_MIN,
            c_max: Self::DEFAULT_C_MAX,
            mode: UpfMode::Disk,
        }
    }
}

/// Spread that places the robot on the 90% mass contour of the radial field.
pub fn sigma_from_distance(d_r: f64) -> Result<f64, CostmapError> {
    if !(d_r > 0.0) || !d_r.is_finite() {
        return Err(CostmapError::DegenerateGeometry(d_r));
    }
    Ok(d_r / (-2.0 * 0.1f64.ln()).sqrt())
}

/// Radial density `d/sigma^2 * exp(-d^2 / 2 sigma^2)`.
pub fn radial_density(d: f64, sigma: f64) -> f64 {
    d / (sigma * sigma) * (-(d * d) / (2.0 * sigma * sigma)).exp()
}

pub fn upf_density(d: f64, sigma: f64, mode: UpfMode) -> f64 {
    match mode {
        UpfMode::Literal => radial_density(d, sigma),
        UpfMode::Disk => radial_density(d.max(sigma), sigma),
    }
}

/// Linear density-to-cost map: `p_max -> c_min`, `p_min -> c_max`.
pub fn density_to_cost(p: f64, p_min: f64, p_max: f64, c_min: u8, c_max: u8) -> Result<u8, CostmapError> {
    if !(p_min < p_max) || p < p_min || p > p_max {
        return Err(CostmapError::DensityOutOfRange { p, p_min, p_max });
    }
    let (lo, hi) = (f64::from(c_min), f64::from(c_max));
    let c = hi - (p_min - p) * (hi - lo) / (p_min - p_max);
    Ok(c.round().clamp(0.0, f64::from(LETHAL)) as u8)
}

/// Raw UPF costs over the map (before the max with any base layer).
pub fn upf_costs(params: &UpfParams, like: &Costmap) -> Result<Vec<u8>, CostmapError> {
    if params.c_min >= params.c_max || params.c_max > LETHAL {
        return Err(CostmapError::BadCostRange { c_min: params.c_min, c_max: params.c_max });
    }
    let pref = params.preference_point;
    if like.world_to_grid(pref) == GridLookup::OutOfBounds {
        return Err(CostmapError::PreferenceOutOfBounds { x: pref.x, y: pref.y });
    }
    let sigma = sigma_from_distance(params.robot_position.dist(pref))?;
    let density: Vec<f64> = (0..like.len())
        .map(|k| {
            let d = like.cell_center(like.cell_of_index(k)).dist(pref);
            upf_density(d, sigma, params.mode)
        })
        .collect();
    let (p_min, p_max) = density.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    if !(p_min < p_max) {
        // A single-valued field carries no preference.
        return Ok(vec![params.c_min; like.len()]);
    }
    density
        .into_iter()
        // A UPF cell never becomes lethal on its own.
        .map(|p| density_to_cost(p, p_min, p_max, params.c_min, params.c_max).map(|c| c.min(INSCRIBED)))
        .collect()
}

/// Applies the preference field on top of `base` with the max rule.
pub fn build_upf_layer(params: &UpfParams, base: &Costmap) -> Result<Costmap, CostmapError> {
    let upf = upf_costs(params, base)?;
    let mut out = base.clone();
    for (c, u) in out.cost.iter_mut().zip(upf) {
        if *c < u {
            *c = u;
        }
    }
    Ok(out)
}

pub fn compose_layers(
    static_layer: &Costmap,
    inflation_layer: &Costmap,
    upf_layer: Option<&Costmap>,
) -> Result<Costmap, CostmapError> {
    if !static_layer.same_extents(inflation_layer) || upf_layer.is_some_and(|u| !static_layer.same_extents(u)) {
        return Err(CostmapError::ExtentMismatch);
    }
    let mut out = static_layer.clone();
    for (k, c) in out.cost.iter_mut().enumerate() {
        *c = (*c).max(inflation_layer.cost[k]);
        if let Some(u) = upf_layer {
            *c = (*c).max(u.cost[k]);
        }
    }
    Ok(out)
}

/// Static + inflation, and the UPF on top when a preference is given.
pub fn build_navigation_costmap(
    grid: &OccupancyGrid,
    inflation_radius: f64,
    upf: Option<&UpfParams>,
) -> Result<Costmap, CostmapError> {
    let base = compose_layers(&Costmap::static_layer(grid), &Costmap::inflation_layer(grid, inflation_radius), None)?;
    match upf {
        Some(p) => build_upf_layer(p, &base),
        None => Ok(base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn open_grid(w: usize, h: usize) -> OccupancyGrid {
        OccupancyGrid::new_empty(w, h, 0.05, Point2::default()).unwrap()
    }

    #[test]
    fn sigma_examples() {
        assert!((sigma_from_distance(1.0).unwrap() - 0.465).abs() < 2e-3);
        assert!((sigma_from_distance(10.0).unwrap() - 4.66).abs() < 5e-3);
        assert_eq!(sigma_from_distance(0.0), Err(CostmapError::DegenerateGeometry(0.0)));
        assert!(sigma_from_distance(-1.0).is_err());
    }

    #[test]
    fn sigma_puts_ninety_percent_inside_d_r() {
        // closed-form Rayleigh CDF at d_r
        let s = sigma_from_distance(3.0).unwrap();
        let cdf = 1.0 - (-(3.0f64 * 3.0) / (2.0 * s * s)).exp();
        assert!((cdf - 0.9).abs() < 1e-12);
    }

    #[test]
    fn density_to_cost_endpoints() {
        assert_eq!(density_to_cost(2.0, 1.0, 2.0, 10, 150).unwrap(), 10);
        assert_eq!(density_to_cost(1.0, 1.0, 2.0, 10, 150).unwrap(), 150);
        assert_eq!(density_to_cost(1.5, 1.0, 2.0, 10, 150).unwrap(), 80);
        assert!(density_to_cost(2.5, 1.0, 2.0, 10, 150).is_err());
        assert!(density_to_cost(1.0, 2.0, 2.0, 10, 150).is_err());
    }

    #[test]
    fn lethal_cells_stay_lethal() {
        let mut grid = open_grid(40, 40);
        grid.set_occupied(Cell::new(35, 35), true);
        let base = Costmap::static_layer(&grid);
        let params = UpfParams::new(Point2::new(0.5, 0.5), Point2::new(1.5, 1.5));
        let out = build_upf_layer(&params, &base).unwrap();
        assert_eq!(out.get(Cell::new(35, 35)), LETHAL);
        let lethal_before: Vec<usize> = (0..base.len()).filter(|&k| base.costs()[k] == LETHAL).collect();
        let lethal_after: Vec<usize> = (0..out.len()).filter(|&k| out.costs()[k] == LETHAL).collect();
        assert_eq!(lethal_before, lethal_after);
    }

    #[test]
    fn far_field_is_expensive() {
        let grid = open_grid(200, 200);
        let base = Costmap::zeros_like(&grid);
        let params = UpfParams::new(Point2::new(1.0, 1.0), Point2::new(2.0, 1.0));
        let out = build_upf_layer(&params, &base).unwrap();
        let far = out.get(Cell::new(199, 199));
        assert!(far >= params.c_max - 1, "far cost {far}");
    }

    #[test]
    fn preference_out_of_bounds_rejected() {
        let grid = open_grid(20, 20);
        let base = Costmap::zeros_like(&grid);
        let params = UpfParams::new(Point2::new(5.0, 5.0), Point2::new(0.1, 0.1));
        assert_eq!(build_upf_layer(&params, &base), Err(CostmapError::PreferenceOutOfBounds { x: 5.0, y: 5.0 }));
        let same = UpfParams::new(Point2::new(0.3, 0.3), Point2::new(0.3, 0.3));
        assert!(matches!(build_upf_layer(&same, &base), Err(CostmapError::DegenerateGeometry(_))));
    }

    #[test]
    fn valley_shape_by_mode() {
        // Brute-force scan of a 100x100 map.
        let grid = open_grid(100, 100);
        let base = Costmap::zeros_like(&grid);
        let pref = Point2::new(2.5, 2.5);
        let robot = Point2::new(4.0, 2.5);
        let sigma = sigma_from_distance(1.5).unwrap();
        for mode in [UpfMode::Literal, UpfMode::Disk] {
            let params = UpfParams { mode, ..UpfParams::new(pref, robot) };
            let out = build_upf_layer(&params, &base).unwrap();
            let min = *out.costs().iter().min().unwrap();
            assert_eq!(min, params.c_min);
            for k in 0..out.len() {
                let d = out.cell_center(out.cell_of_index(k)).dist(pref);
                let c = out.costs()[k];
                match mode {
                    UpfMode::Disk => {
                        if d <= sigma {
                            assert_eq!(c, params.c_min, "d={d}");
                        }
                    }
                    UpfMode::Literal => {
                        if c == min {
                            assert!((d - sigma).abs() < 0.1, "min at d={d}, sigma={sigma}");
                        }
                    }
                }
            }
            if mode == UpfMode::Literal {
                let center = out.get(out.world_to_grid(pref).cell().unwrap());
                assert!(center > 100, "literal center cost {center}");
            }
        }
    }

    #[test]
    fn compose_examples() {
        let grid = open_grid(10, 10);
        let z = Costmap::zeros_like(&grid);
        assert_eq!(compose_layers(&z, &z, Some(&z)).unwrap(), z);
        let mut s = z.clone();
        s.set(Cell::new(3, 3), LETHAL);
        let mut inf = z.clone();
        inf.set(Cell::new(4, 4), 100);
        let out = compose_layers(&s, &inf, Some(&z)).unwrap();
        assert_eq!(out.get(Cell::new(3, 3)), LETHAL);
        assert_eq!(out.get(Cell::new(4, 4)), 100);
        assert_eq!(compose_layers(&s, &inf, None).unwrap(), out);
        let other = Costmap::zeros_like(&open_grid(11, 10));
        assert_eq!(compose_layers(&s, &other, None), Err(CostmapError::ExtentMismatch));
    }

    #[test]
    fn inflation_decays_to_zero() {
        let mut grid = open_grid(60, 60);
        grid.set_occupied(Cell::new(30, 30), true);
        let inf = Costmap::inflation_layer(&grid, 0.8);
        assert_eq!(inf.get(Cell::new(30, 30)), 0);
        let near = inf.get(Cell::new(31, 30));
        assert!(near >= 240, "{near}");
        let further = inf.get(Cell::new(40, 30));
        assert!(further < near && further > 0);
        assert_eq!(inf.get(Cell::new(47, 30)), 0);
        assert_eq!(inf.get(Cell::new(30, 50)), 0);
    }

    #[test]
    fn ascii_dump_layout() {
        let grid = open_grid(3, 2);
        let mut c = Costmap::zeros_like(&grid);
        c.set(Cell::new(2, 1), 7);
        assert_eq!(c.to_ascii(), "3 2 0.05 0 0\n0 0 0\n0 0 7\n");
    }

    proptest! {
        #[test]
        fn density_to_cost_is_affine(p_min in -5.0f64..5.0, span in 1e-3f64..10.0, t in 0.0f64..=1.0) {
            let p_max = p_min + span;
            let p = p_min + t * span;
            let c = density_to_cost(p, p_min, p_max, 0, 200).unwrap() as f64;
            // two-point interpolation between (p_min, 200) and (p_max, 0)
            let expected = 200.0 + (0.0 - 200.0) * (p - p_min) / (p_max - p_min);
            prop_assert!((c - expected).abs() <= 0.5 + 1e-9);
        }

        #[test]
        fn upf_monotone_and_radially_symmetric(px in 0.5f64..2.0, py in 0.5f64..2.0, rx in 0.0f64..2.5) {
            let mut grid = open_grid(50, 50);
            grid.set_occupied(Cell::new(10, 40), true);
            let base = build_navigation_costmap(&grid, 0.8, None).unwrap();
            let params = UpfParams::new(Point2::new(px, py), Point2::new(rx, 2.4));
            prop_assume!(params.robot_position.dist(params.preference_point) > 0.05);
            let out = build_upf_layer(&params, &base).unwrap();
            for k in 0..out.len() {
                prop_assert!(out.costs()[k] >= base.costs()[k]);
                prop_assert_eq!(out.costs()[k] == LETHAL, base.costs()[k] == LETHAL);
            }
            // preference snapped to a cell center: mirrored cells are equidistant
            let snap = |v: f64| ((v / 0.05).floor() + 0.5) * 0.05;
            let pref = Point2::new(snap(px), snap(py));
            let params = UpfParams::new(pref, Point2::new(rx, 2.4));
            let raw = upf_costs(&params, &base).unwrap();
            let c = out.world_to_grid(pref).cell().unwrap();
            for (di, dj) in [(3isize, 4isize), (7, 1), (2, 9)] {
                let ring = [(di, dj), (-di, dj), (di, -dj), (-di, -dj), (dj, di), (-dj, di), (dj, -di), (-dj, -di)];
                let vals: Vec<u8> = ring.iter().filter_map(|&(a, b)| {
                    let (i, j) = (c.i as isize + a, c.j as isize + b);
                    out.in_bounds(i, j).then(|| raw[out.index(Cell::new(i as usize, j as usize))])
                }).collect();
                prop_assert!(vals.windows(2).all(|w| w[0] == w[1]), "{:?}", vals);
            }
        }
    }
}
