//! Pedestrian perception: background subtraction, density clustering,
//! constant-velocity Kalman tracking and asymmetric social areas.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::crowd_sim::Scan;
use crate::gridworld::{normalize_angle, Cell, OccupancyGrid, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub eps_d_m: f64,
    pub min_pts: usize,
    pub background_margin_m: f64,
    /// Std of the white-noise acceleration driving the motion model (m/s^2).
    pub process_noise: f64,
    /// Std of a position measurement (m).
    pub measurement_noise_m: f64,
    /// Std of the velocity prior for a new track (m/s).
    pub initial_velocity_std: f64,
    pub association_gate_m: f64,
    pub max_misses: u32,
    /// Scale factor of the social-area radius.
    pub c_scale: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            eps_d_m: 0.5,
            min_pts: 3,
            background_margin_m: 0.1,
            process_noise: 0.5,
            measurement_noise_m: 0.05,
            initial_velocity_std: 10.0,
            association_gate_m: 0.8,
            max_misses: 5,
            c_scale: 1.0,
        }
    }
}

impl PerceptionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eps_d_m > 0.0) {
            return Err("perception.eps_d_m must be > 0".into());
        }
        if self.min_pts < 1 {
            return Err("perception.min_pts must be >= 1".into());
        }
        if !(self.c_scale > 0.0) {
            return Err("perception.c_scale must be > 0".into());
        }
        if !(self.measurement_noise_m > 0.0) || !(self.process_noise >= 0.0) {
            return Err("perception noise terms must be positive".into());
        }
        Ok(())
    }
}

/// Keeps scan endpoints farther than `margin` from every occupied cell.
pub fn extract_dynamic_points(scan: &Scan, grid: &OccupancyGrid, margin: f64) -> Vec<Point2> {
    scan.endpoints().into_iter().filter(|&p| !near_occupied(grid, p, margin)).collect()
}

fn near_occupied(grid: &OccupancyGrid, p: Point2, margin: f64) -> bool {
    let res = grid.resolution();
    let o = grid.origin();
    let lo_i = ((p.x - margin - o.x) / res).floor() as isize;
    let hi_i = ((p.x + margin - o.x) / res).floor() as isize;
    let lo_j = ((p.y - margin - o.y) / res).floor() as isize;
    let hi_j = ((p.y + margin - o.y) / res).floor() as isize;
    for j in lo_j..=hi_j {
        for i in lo_i..=hi_i {
            if !grid.in_bounds(i, j) || !grid.is_occupied(Cell::new(i as usize, j as usize)) {
                continue;
            }
            // distance from p to the cell square
            let x0 = o.x + i as f64 * res;
            let y0 = o.y + j as f64 * res;
            let dx = (x0 - p.x).max(0.0).max(p.x - (x0 + res));
            let dy = (y0 - p.y).max(0.0).max(p.y - (y0 + res));
            if dx.hypot(dy) <= margin {
                return true;
            }
        }
    }
    false
}

/// Cluster label per point: `Some(cluster)` or `None` for noise.
///
/// Clusters are numbered in order of their lowest-index core point; a
/// border point joins the lowest-numbered cluster with a core point inside
/// `eps` (the classic scan-order expansion).
pub fn dbscan(points: &[Point2], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let index = SpatialHash::new(points, eps);
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0usize;
    let mut neigh = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for i in 0..n {
        if visited[i] {
            continue;
        }
        index.neighbors(points, i, eps, &mut neigh);
        if neigh.len() < min_pts {
            continue;
        }
        visited[i] = true;
        let cid = next;
        next += 1;
        labels[i] = Some(cid);
        queue.clear();
        queue.extend(neigh.iter().copied());
        while let Some(q) = queue.pop_front() {
            if labels[q].is_none() {
                labels[q] = Some(cid);
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            index.neighbors(points, q, eps, &mut neigh);
            if neigh.len() >= min_pts {
                queue.extend(neigh.iter().copied().filter(|&r| !visited[r] || labels[r].is_none()));
            }
        }
    }
    labels
}

/// Uniform bucket grid with cell size `eps` for radius queries.
struct SpatialHash {
    cell: f64,
    buckets: std::collections::BTreeMap<(i64, i64), Vec<usize>>,
}

impl SpatialHash {
    fn new(points: &[Point2], eps: f64) -> Self {
        let mut buckets: std::collections::BTreeMap<(i64, i64), Vec<usize>> = Default::default();
        for (k, p) in points.iter().enumerate() {
            buckets.entry(Self::key(*p, eps)).or_default().push(k);
        }
        Self { cell: eps, buckets }
    }

    fn key(p: Point2, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Indices within `eps` of point `i` (itself included), ascending.
    fn neighbors(&self, points: &[Point2], i: usize, eps: f64, out: &mut Vec<usize>) {
        out.clear();
        let (kx, ky) = Self::key(points[i], self.cell);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(b) = self.buckets.get(&(kx + dx, ky + dy)) {
                    out.extend(b.iter().copied().filter(|&j| points[j].dist(points[i]) <= eps));
                }
            }
        }
        out.sort_unstable();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub position: Point2,
    pub support: usize,
    /// Largest distance from the centroid to a member point.
    pub extent: f64,
}

pub fn cluster_pedestrians(points: &[Point2], cfg: &PerceptionConfig) -> Vec<Detection> {
    let labels = dbscan(points, cfg.eps_d_m, cfg.min_pts);
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<Point2>> = vec![Vec::new(); count];
    for (p, l) in points.iter().zip(&labels) {
        if let Some(c) = l {
            members[*c].push(*p);
        }
    }
    members
        .into_iter()
        .map(|pts| {
            let n = pts.len() as f64;
            let sum = pts.iter().fold(Point2::default(), |a, p| a.add(*p));
            let centroid = sum.scale(1.0 / n);
            let extent = pts.iter().map(|p| p.dist(centroid)).fold(0.0, f64::max);
            Detection { position: centroid, support: pts.len(), extent }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianTrack {
    pub id: u32,
    /// (x, y, vx, vy)
    pub state: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub age: u32,
    pub misses: u32,
    pub extent: f64,
}

impl PedestrianTrack {
    pub fn position(&self) -> Point2 {
        Point2::new(self.state[0], self.state[1])
    }

    pub fn velocity(&self) -> Point2 {
        Point2::new(self.state[2], self.state[3])
    }
}

fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

fn process_cov(dt: f64, q: f64) -> Matrix4<f64> {
    let q2 = q * q;
    let (a, b, c) = (dt.powi(4) / 4.0 * q2, dt.powi(3) / 2.0 * q2, dt * dt * q2);
    Matrix4::new(
        a, 0.0, b, 0.0, //
        0.0, a, 0.0, b, //
        b, 0.0, c, 0.0, //
        0.0, b, 0.0, c,
    )
}

/// Constant-velocity multi-target tracker with greedy nearest association.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    pub tracks: Vec<PedestrianTrack>,
    next_id: u32,
}

impl Tracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, detections: &[Detection], dt: f64, cfg: &PerceptionConfig) {
        let f = transition(dt);
        let q = process_cov(dt, cfg.process_noise);
        let r = Matrix2::identity() * cfg.measurement_noise_m.powi(2);
        let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);

        for t in &mut self.tracks {
            t.state = f * t.state;
            t.covariance = f * t.covariance * f.transpose() + q;
            t.age += 1;
        }

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in self.tracks.iter().enumerate() {
            for (di, d) in detections.iter().enumerate() {
                let dist = t.position().dist(d.position);
                if dist <= cfg.association_gate_m {
                    pairs.push((dist, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; self.tracks.len()];
        let mut det_used = vec![false; detections.len()];
        for (_, ti, di) in pairs {
            if track_used[ti] || det_used[di] {
                continue;
            }
            track_used[ti] = true;
            det_used[di] = true;
            let t = &mut self.tracks[ti];
            let z = Vector2::new(detections[di].position.x, detections[di].position.y);
            let innov = z - h * t.state;
            let s = h * t.covariance * h.transpose() + r;
            let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
            let k: Matrix4x2<f64> = t.covariance * h.transpose() * s_inv;
            t.state += k * innov;
            // Joseph form keeps the covariance symmetric PSD.
            let ikh = Matrix4::identity() - k * h;
            let p = ikh * t.covariance * ikh.transpose() + k * r * k.transpose();
            t.covariance = (p + p.transpose()) * 0.5;
            t.misses = 0;
            t.extent = detections[di].extent;
        }
        for (t, used) in self.tracks.iter_mut().zip(&track_used) {
            if !used {
                t.misses += 1;
            }
        }
        self.tracks.retain(|t| t.misses <= cfg.max_misses);

        let pos_var = cfg.measurement_noise_m.powi(2);
        let vel_var = cfg.initial_velocity_std.powi(2);
        for (d, used) in detections.iter().zip(det_used) {
            if used {
                continue;
            }
            self.next_id += 1;
            self.tracks.push(PedestrianTrack {
                id: self.next_id,
                state: Vector4::new(d.position.x, d.position.y, 0.0, 0.0),
                covariance: Matrix4::from_diagonal(&Vector4::new(pos_var, pos_var, vel_var, vel_var)),
                age: 1,
                misses: 0,
                extent: d.extent,
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialArea {
    pub center: Point2,
    pub heading: f64,
    pub sigma_h: f64,
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub c_scale: f64,
}

impl SocialArea {
    pub fn from_velocity(center: Point2, velocity: Point2, c_scale: f64) -> Self {
        let sigma_h = (2.0 * velocity.norm()).max(0.5);
        Self {
            center,
            heading: velocity.y.atan2(velocity.x),
            sigma_h,
            sigma_s: 2.0 / 3.0 * sigma_h,
            sigma_r: 0.5 * sigma_h,
            c_scale,
        }
    }

    /// Relative bearing of `p` measured from the heading, in (-pi, pi].
    pub fn bearing_of(&self, p: Point2) -> f64 {
        normalize_angle((p.y - self.center.y).atan2(p.x - self.center.x) - self.heading)
    }
}

/// Extent of the area along relative bearing `delta`.
pub fn social_radius(area: &SocialArea, delta: f64) -> f64 {
    let sigma = if delta.abs() <= FRAC_PI_2 { area.sigma_h } else { area.sigma_r };
    let (s, c) = delta.sin_cos();
    area.c_scale / (c * c / (2.0 * sigma * sigma) + s * s / (2.0 * area.sigma_s * area.sigma_s))
}

/// Derivative of [`social_radius`] with respect to `delta`.
pub fn social_radius_derivative(area: &SocialArea, delta: f64) -> f64 {
    let sigma = if delta.abs() <= FRAC_PI_2 { area.sigma_h } else { area.sigma_r };
    let (s, c) = delta.sin_cos();
    let a = 1.0 / (2.0 * sigma * sigma);
    let b = 1.0 / (2.0 * area.sigma_s * area.sigma_s);
    let d = a * c * c + b * s * s;
    let dd = 2.0 * s * c * (b - a);
    -area.c_scale * dd / (d * d)
}

/// A tracked pedestrian as seen by the local planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedObstacle {
    pub id: u32,
    pub position: Point2,
    pub velocity: Point2,
    pub area: SocialArea,
    pub extent: f64,
}

/// One social area for every confirmed track (age >= 2).
pub fn build_social_areas(tracks: &[PedestrianTrack], cfg: &PerceptionConfig) -> Vec<TrackedObstacle> {
    tracks
        .iter()
        .filter(|t| t.age >= 2)
        .map(|t| TrackedObstacle {
            id: t.id,
            position: t.position(),
            velocity: t.velocity(),
            area: SocialArea::from_velocity(t.position(), t.velocity(), cfg.c_scale),
            extent: t.extent,
        })
        .collect()
}

/// Full per-tick perception cycle.
#[derive(Debug, Clone, Default)]
pub struct Perception {
    pub cfg: PerceptionConfig,
    pub tracker: Tracker,
}

impl Perception {
    pub fn new(cfg: PerceptionConfig) -> Self {
        Self { cfg, tracker: Tracker::new() }
    }

    pub fn process(&mut self, scan: &Scan, grid: &OccupancyGrid, dt: f64) -> Vec<TrackedObstacle> {
        let points = extract_dynamic_points(scan, grid, self.cfg.background_margin_m);
        let detections = cluster_pedestrians(&points, &self.cfg);
        self.tracker.update(&detections, dt, &self.cfg);
        build_social_areas(&self.tracker.tracks, &self.cfg)
    }
}
