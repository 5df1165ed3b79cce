//! Cost-aware A* over a composed costmap, reference sampling along the
//! resulting path, and path-deviation scoring.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::{Costmap, LETHAL};
use crate::gridworld::{Cell, Point2, Pose2D};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("{which} cell {cell} is out of bounds")]
    OutOfBounds { which: &'static str, cell: Cell },
    #[error("{which} cell {cell} is lethal")]
    Lethal { which: &'static str, cell: Cell },
    #[error("no path from {start} to {goal}")]
    NoPath { start: Cell, goal: Cell },
    #[error("path is empty")]
    EmptyPath,
    #[error("invalid reference request: {0}")]
    BadRequest(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AstarWeights {
    /// Scales the per-cell cost into the edge weight.
    pub cost_weight: f64,
}

impl Default for AstarWeights {
    fn default() -> Self {
        Self { cost_weight: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPath {
    pub waypoints: Vec<Point2>,
    pub cells: Vec<Cell>,
    pub total_length: f64,
    pub total_cost: f64,
}

impl GlobalPath {
    /// Wraps an arbitrary polyline (no grid cells), e.g. a hand-written route.
    pub fn from_polyline(waypoints: Vec<Point2>) -> Self {
        let total_length = polyline_length(&waypoints);
        Self { waypoints, cells: Vec::new(), total_length, total_cost: 0.0 }
    }

    pub fn goal(&self) -> Option<Point2> {
        self.waypoints.last().copied()
    }

    /// Moving average over `2 * half_window + 1` waypoints with the
    /// endpoints kept fixed; removes the grid staircase before the path is
    /// used as a tracking reference.
    pub fn smoothed(&self, half_window: usize) -> GlobalPath {
        let n = self.waypoints.len();
        if n < 3 || half_window == 0 {
            return self.clone();
        }
        let pts: Vec<Point2> = (0..n)
            .map(|k| {
                let w = half_window.min(k).min(n - 1 - k);
                let sum = self.waypoints[k - w..=k + w].iter().fold(Point2::default(), |a, p| a.add(*p));
                sum.scale(1.0 / (2 * w + 1) as f64)
            })
            .collect();
        GlobalPath {
            total_length: polyline_length(&pts),
            waypoints: pts,
            cells: self.cells.clone(),
            total_cost: self.total_cost,
        }
    }
}

pub fn polyline_length(pts: &[Point2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Weight of a single grid move into `to`.
pub fn edge_weight(step_len: f64, to_cost: u8, weights: &AstarWeights) -> f64 {
    step_len * (1.0 + weights.cost_weight * f64::from(to_cost) / f64::from(LETHAL))
}

pub(crate) const NEIGHBORS: [(isize, isize, bool); 8] = [
    (1, 0, false),
    (-1, 0, false),
    (0, 1, false),
    (0, -1, false),
    (1, 1, true),
    (1, -1, true),
    (-1, 1, true),
    (-1, -1, true),
];

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    f: f64,
    h: f64,
    idx: usize,
    g: f64,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // BinaryHeap is a max-heap: reverse so the smallest (f, h, idx) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.h.total_cmp(&self.h)).then_with(|| other.idx.cmp(&self.idx))
    }
}

fn check_endpoint(costmap: &Costmap, which: &'static str, c: Cell) -> Result<(), PlanError> {
    if !costmap.in_bounds(c.i as isize, c.j as isize) {
        return Err(PlanError::OutOfBounds { which, cell: c });
    }
    if costmap.is_lethal(c) {
        return Err(PlanError::Lethal { which, cell: c });
    }
    Ok(())
}

/// A* with Euclidean heuristic over the 8-connected grid.
pub fn plan_astar(costmap: &Costmap, start: Cell, goal: Cell, weights: &AstarWeights) -> Result<GlobalPath, PlanError> {
    check_endpoint(costmap, "start", start)?;
    check_endpoint(costmap, "goal", goal)?;
    let res = costmap.resolution();
    let n = costmap.len();
    let start_idx = costmap.index(start);
    let goal_idx = costmap.index(goal);
    let goal_pt = costmap.cell_center(goal);
    let heuristic = |idx: usize| costmap.cell_center(costmap.cell_of_index(idx)).dist(goal_pt);

    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut open = BinaryHeap::new();
    g[start_idx] = 0.0;
    let h0 = heuristic(start_idx);
    open.push(OpenEntry { f: h0, h: h0, idx: start_idx, g: 0.0 });

    let w = costmap.width();
    while let Some(e) = open.pop() {
        if e.g > g[e.idx] {
            continue;
        }
        if e.idx == goal_idx {
            break;
        }
        let (ci, cj) = ((e.idx % w) as isize, (e.idx / w) as isize);
        for &(di, dj, diag) in &NEIGHBORS {
            let (ni, nj) = (ci + di, cj + dj);
            if !costmap.in_bounds(ni, nj) {
                continue;
            }
            let nidx = nj as usize * w + ni as usize;
            let cost = costmap.costs()[nidx];
            if cost >= LETHAL {
                continue;
            }
            let step = if diag { SQRT_2 * res } else { res };
            let cand = e.g + edge_weight(step, cost, weights);
            if cand < g[nidx] {
                // Reopening keeps the result exact even where float rounding
                // makes the heuristic marginally inconsistent.
                g[nidx] = cand;
                parent[nidx] = e.idx;
                let h = heuristic(nidx);
                open.push(OpenEntry { f: cand + h, h, idx: nidx, g: cand });
            }
        }
    }
    if !g[goal_idx].is_finite() {
        return Err(PlanError::NoPath { start, goal });
    }
    let mut cells = vec![goal];
    let mut cur = goal_idx;
    while cur != start_idx {
        cur = parent[cur];
        cells.push(costmap.cell_of_index(cur));
    }
    cells.reverse();
    let waypoints: Vec<Point2> = cells.iter().map(|&c| costmap.cell_center(c)).collect();
    Ok(GlobalPath { total_length: polyline_length(&waypoints), total_cost: g[goal_idx], waypoints, cells })
}

/// Accumulated edge weight along a cell sequence, using the same fold as the planner.
pub fn path_cost(costmap: &Costmap, cells: &[Cell], weights: &AstarWeights) -> f64 {
    let res = costmap.resolution();
    cells.windows(2).fold(0.0, |acc, w| {
        let diag = w[0].i != w[1].i && w[0].j != w[1].j;
        let step = if diag { SQRT_2 * res } else { res };
        acc + edge_weight(step, costmap.get(w[1]), weights)
    })
}

/// Closest point on segment `a-b` to `p`, and its parameter in [0, 1].
pub fn project_on_segment(p: Point2, a: Point2, b: Point2) -> (Point2, f64) {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    (a.add(ab.scale(t)), t)
}

pub fn distance_to_polyline(p: Point2, line: &[Point2]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => p.dist(*only),
        _ => line.windows(2).map(|w| project_on_segment(p, w[0], w[1]).0.dist(p)).fold(f64::INFINITY, f64::min),
    }
}

/// Arc-length position of the point on the polyline nearest to `p`.
fn project_arclength(p: Point2, pts: &[Point2]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let seg = w[0].dist(w[1]);
        let (q, t) = project_on_segment(p, w[0], w[1]);
        let d = q.dist(p);
        if d < best.0 {
            best = (d, acc + t * seg);
        }
        acc += seg;
    }
    best.1
}

/// Pose at arc length `s`. At a vertex the outgoing segment's tangent is used.
fn pose_at_arclength(pts: &[Point2], s: f64) -> Pose2D {
    let mut acc = 0.0;
    let last_heading = {
        let n = pts.len();
        let (a, b) = (pts[n - 2], pts[n - 1]);
        (b.y - a.y).atan2(b.x - a.x)
    };
    for w in pts.windows(2) {
        let seg = w[0].dist(w[1]);
        if seg == 0.0 {
            continue;
        }
        if s < acc + seg {
            let t = ((s - acc) / seg).max(0.0);
            let p = w[0].add(w[1].sub(w[0]).scale(t));
            return Pose2D::new(p.x, p.y, (w[1].y - w[0].y).atan2(w[1].x - w[0].x));
        }
        acc += seg;
    }
    let g = pts[pts.len() - 1];
    Pose2D::new(g.x, g.y, last_heading)
}

/// Samples `n` reference poses ahead of the robot's projection onto the
/// path, `cruise_speed * dt` apart, clamped at the goal.
pub fn path_to_reference(
    path: &GlobalPath,
    robot: &Pose2D,
    cruise_speed: f64,
    dt: f64,
    n: usize,
) -> Result<Vec<Pose2D>, PlanError> {
    if path.waypoints.is_empty() {
        return Err(PlanError::EmptyPath);
    }
    if n == 0 || !(dt > 0.0) {
        return Err(PlanError::BadRequest("need n >= 1 and dt > 0"));
    }
    let pts = &path.waypoints;
    if pts.len() == 1 {
        let g = pts[0];
        return Ok(vec![Pose2D::new(g.x, g.y, robot.theta); n]);
    }
    let s0 = project_arclength(robot.position(), pts);
    let spacing = cruise_speed * dt;
    Ok((0..n).map(|k| pose_at_arclength(pts, s0 + (k + 1) as f64 * spacing)).collect())
}

/// Mean distance from each path waypoint to the ground-truth polyline.
pub fn path_error(path: &GlobalPath, ground_truth: &[Point2]) -> f64 {
    if path.waypoints.is_empty() || ground_truth.is_empty() {
        return 0.0;
    }
    let total: f64 = path.waypoints.iter().map(|&p| distance_to_polyline(p, ground_truth)).sum();
    total / path.waypoints.len() as f64
}
