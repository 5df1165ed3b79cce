//! Deterministic closed-loop world: unicycle robot, scripted and
//! reciprocal-avoidance pedestrians, and a planar range scanner.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::gridworld::{normalize_angle, raycast, OccupancyGrid, Point2, Pose2D};

pub const DEFAULT_DT: f64 = 0.1;
pub const PEDESTRIAN_SPEED: f64 = 1.2;
pub const PEDESTRIAN_RADIUS: f64 = 0.3;
pub const ROBOT_RADIUS: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { v: 0.0, omega: 0.0 };

    pub const fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2D,
    pub last_input: ControlInput,
    pub radius: f64,
}

impl RobotState {
    pub fn new(pose: Pose2D, radius: f64) -> Self {
        Self { pose, last_input: ControlInput::ZERO, radius }
    }
}

/// One Euler step of the unicycle model.
pub fn step_robot(state: &RobotState, u: ControlInput, dt: f64) -> RobotState {
    let p = state.pose;
    RobotState {
        pose: Pose2D {
            x: p.x + u.v * p.theta.cos() * dt,
            y: p.y + u.v * p.theta.sin() * dt,
            theta: normalize_angle(p.theta + u.omega * dt),
        },
        last_input: u,
        radius: state.radius,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedWaypoint {
    pub t_s: f64,
    pub target_m: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PedestrianPolicy {
    /// Walks toward the waypoint active at the current time, ignoring everyone.
    Scripted { waypoints: Vec<TimedWaypoint> },
    /// Velocity-sampling reciprocal avoidance toward a goal.
    Reciprocal { goal_m: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub id: u32,
    pub position: Point2,
    pub velocity: Point2,
    pub radius: f64,
    pub preferred_speed: f64,
    pub policy: PedestrianPolicy,
}

impl Pedestrian {
    fn is_reciprocal(&self) -> bool {
        matches!(self.policy, PedestrianPolicy::Reciprocal { .. })
    }
}

/// Tunables of the reciprocal policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReciprocalParams {
    pub directions: usize,
    pub speed_fractions: [f64; 4],
    pub w_pref: f64,
    pub w_ttc: f64,
    pub ttc_eps: f64,
    pub horizon_s: f64,
    /// Tiny cost per unit of left-hand deviation: agents break ties by passing right.
    pub pass_right_bias: f64,
}

impl Default for ReciprocalParams {
    fn default() -> Self {
        Self {
            directions: 48,
            speed_fractions: [1.0, 0.75, 0.5, 0.25],
            w_pref: 1.0,
            w_ttc: 1.0,
            ttc_eps: 0.05,
            horizon_s: 5.0,
            pass_right_bias: 1e-6,
        }
    }
}

/// Earliest `t >= 0` at which two discs, separated by `rel_pos` and closing
/// with `rel_vel` (positions evolve as `rel_pos + rel_vel * t`), touch.
pub fn time_to_collision(rel_pos: Point2, rel_vel: Point2, radius: f64) -> f64 {
    let c = rel_pos.dot(rel_pos) - radius * radius;
    if c <= 0.0 {
        return 0.0;
    }
    let a = rel_vel.dot(rel_vel);
    let b = rel_pos.dot(rel_vel);
    if a == 0.0 || b >= 0.0 {
        return f64::INFINITY;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    (-b - disc.sqrt()) / a
}

fn preferred_velocity(ped: &Pedestrian, goal: Point2, dt: f64) -> Point2 {
    let to_goal = goal.sub(ped.position);
    let d = to_goal.norm();
    if d < 1e-9 {
        return Point2::default();
    }
    let speed = ped.preferred_speed.min(d / dt);
    to_goal.scale(speed / d)
}

fn reciprocal_velocity(
    idx: usize,
    peds: &[Pedestrian],
    robot: &RobotState,
    goal: Point2,
    dt: f64,
    params: &ReciprocalParams,
) -> Point2 {
    let me = &peds[idx];
    let v_pref = preferred_velocity(me, goal, dt);
    let base_heading = if v_pref.norm() > 0.0 {
        v_pref.y.atan2(v_pref.x)
    } else if me.velocity.norm() > 0.0 {
        me.velocity.y.atan2(me.velocity.x)
    } else {
        0.0
    };
    let robot_vel =
        Point2::new(robot.last_input.v * robot.pose.theta.cos(), robot.last_input.v * robot.pose.theta.sin());

    let cost_of = |cand: Point2, bias: f64| -> f64 {
        let mut ttc = f64::INFINITY;
        for (j, other) in peds.iter().enumerate() {
            if j == idx {
                continue;
            }
            // reciprocal partners are assumed to take half the avoidance
            let my_vel = if other.is_reciprocal() { cand.scale(2.0).sub(me.velocity) } else { cand };
            let t = time_to_collision(
                other.position.sub(me.position),
                other.velocity.sub(my_vel),
                me.radius + other.radius,
            );
            ttc = ttc.min(t);
        }
        let t =
            time_to_collision(robot.pose.position().sub(me.position), robot_vel.sub(cand), me.radius + robot.radius);
        ttc = ttc.min(t);
        let avoid = if ttc <= params.horizon_s { params.w_ttc / (ttc + params.ttc_eps) } else { 0.0 };
        params.w_pref * cand.sub(v_pref).norm() + avoid + bias
    };

    let mut best = (cost_of(v_pref, 0.0), v_pref);
    let n = params.directions.max(2);
    let step = 2.0 * PI / n as f64;
    // offsets 0, +s, -s, +2s, -2s, ..., pi
    let mut offsets = vec![0.0];
    for m in 1..n.div_ceil(2) {
        offsets.push(m as f64 * step);
        offsets.push(-(m as f64) * step);
    }
    if n.is_multiple_of(2) {
        offsets.push(PI);
    }
    for offset in offsets {
        let bias = if offset > 0.0 { params.pass_right_bias * offset } else { 0.0 };
        let heading = base_heading + offset;
        for &frac in &params.speed_fractions {
            let speed = me.preferred_speed * frac;
            let cand = Point2::new(speed * heading.cos(), speed * heading.sin());
            let c = cost_of(cand, bias);
            if c < best.0 {
                best = (c, cand);
            }
        }
    }
    let stop = cost_of(Point2::default(), 0.0);
    if stop < best.0 {
        best = (stop, Point2::default());
    }
    best.1
}

fn scripted_velocity(ped: &Pedestrian, waypoints: &[TimedWaypoint], t: f64, dt: f64) -> Point2 {
    let Some(first) = waypoints.first() else {
        return Point2::default();
    };
    let active = waypoints.iter().take_while(|w| w.t_s <= t + 1e-9).last().unwrap_or(first);
    let target = Point2::from(active.target_m);
    let to = target.sub(ped.position);
    let d = to.norm();
    if d < 1e-12 {
        return Point2::default();
    }
    let travel = (ped.preferred_speed * dt).min(d);
    to.scale(travel / (d * dt))
}

/// Advances every pedestrian by one tick. New velocities are chosen from
/// the pre-step state of all agents, then applied together.
pub fn step_pedestrians(
    peds: &[Pedestrian],
    robot: &RobotState,
    dt: f64,
    t: f64,
    params: &ReciprocalParams,
) -> Vec<Pedestrian> {
    let velocities: Vec<Point2> = peds
        .iter()
        .enumerate()
        .map(|(k, p)| match &p.policy {
            PedestrianPolicy::Scripted { waypoints } => scripted_velocity(p, waypoints, t, dt),
            PedestrianPolicy::Reciprocal { goal_m } => {
                reciprocal_velocity(k, peds, robot, Point2::from(*goal_m), dt, params)
            }
        })
        .collect();
    peds.iter()
        .zip(velocities)
        .map(|(p, v)| Pedestrian { position: p.position.add(v.scale(dt)), velocity: v, ..p.clone() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub beams: usize,
    pub max_range_m: f64,
    pub noise_std_m: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self { beams: 360, max_range_m: 10.0, noise_std_m: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub stamp: f64,
    pub origin: Pose2D,
    /// Beam angles in the sensor frame.
    pub angles: Vec<f64>,
    pub ranges: Vec<f64>,
    pub hits: Vec<bool>,
    pub max_range: f64,
}

impl Scan {
    pub fn beam_count(&self) -> usize {
        self.ranges.len()
    }

    /// World-frame endpoints of beams that hit something.
    pub fn endpoints(&self) -> Vec<Point2> {
        self.angles
            .iter()
            .zip(&self.ranges)
            .zip(&self.hits)
            .filter(|(_, &hit)| hit)
            .map(|((&a, &r), _)| {
                let th = self.origin.theta + a;
                Point2::new(self.origin.x + r * th.cos(), self.origin.y + r * th.sin())
            })
            .collect()
    }
}

const MIN_RANGE: f64 = 1e-3;

pub fn synth_scan(
    robot: &RobotState,
    grid: &OccupancyGrid,
    peds: &[Pedestrian],
    cfg: &LidarConfig,
    stamp: f64,
    noise: Option<&mut ChaCha8Rng>,
) -> Scan {
    let circles: Vec<(Point2, f64)> = peds.iter().map(|p| (p.position, p.radius)).collect();
    let n = cfg.beams.max(1);
    let origin = robot.pose;
    let angles: Vec<f64> = (0..n).map(|k| -PI + 2.0 * PI * k as f64 / n as f64).collect();
    let mut ranges = Vec::with_capacity(n);
    let mut hits = Vec::with_capacity(n);
    for &a in &angles {
        let hit = raycast(origin.position(), origin.theta + a, cfg.max_range_m, grid, &circles);
        ranges.push(hit.distance.max(MIN_RANGE));
        hits.push(hit.hit);
    }
    if let Some(rng) = noise {
        if cfg.noise_std_m > 0.0 {
            let normal = Normal::new(0.0, cfg.noise_std_m).expect("finite std");
            for (r, &h) in ranges.iter_mut().zip(&hits) {
                if h {
                    *r = (*r + normal.sample(rng)).clamp(MIN_RANGE, cfg.max_range_m);
                }
            }
        }
    }
    Scan { stamp, origin, angles, ranges, hits, max_range: cfg.max_range_m }
}

/// Ground-truth state at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub t: f64,
    pub robot: RobotState,
    pub pedestrians: Vec<Pedestrian>,
    pub collided: bool,
}

/// Surface separation between the robot and its nearest pedestrian.
pub fn min_surface_distance(robot: &RobotState, peds: &[Pedestrian]) -> Option<f64> {
    peds.iter().map(|p| p.position.dist(robot.pose.position()) - robot.radius - p.radius).reduce(f64::min)
}

#[derive(Debug, Clone)]
pub struct World {
    pub grid: OccupancyGrid,
    pub t: f64,
    pub dt: f64,
    pub robot: RobotState,
    pub pedestrians: Vec<Pedestrian>,
    pub collided: bool,
    pub lidar: LidarConfig,
    pub reciprocal: ReciprocalParams,
    rng: ChaCha8Rng,
}

impl World {
    pub fn new(
        grid: OccupancyGrid,
        robot: RobotState,
        pedestrians: Vec<Pedestrian>,
        dt: f64,
        lidar: LidarConfig,
        seed: u64,
    ) -> Self {
        let mut w = Self {
            grid,
            t: 0.0,
            dt,
            robot,
            pedestrians,
            collided: false,
            lidar,
            reciprocal: ReciprocalParams::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        w.collided = w.in_collision();
        w
    }

    pub fn in_collision(&self) -> bool {
        min_surface_distance(&self.robot, &self.pedestrians).is_some_and(|d| d < 0.0)
    }

    pub fn scan(&mut self) -> Scan {
        let noisy = self.lidar.noise_std_m > 0.0;
        synth_scan(&self.robot, &self.grid, &self.pedestrians, &self.lidar, self.t, noisy.then_some(&mut self.rng))
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot { t: self.t, robot: self.robot, pedestrians: self.pedestrians.clone(), collided: self.collided }
    }

    /// Applies `cmd` for one tick, moves the crowd, advances the clock and
    /// returns the scan taken from the new state.
    pub fn step(&mut self, cmd: ControlInput) -> Scan {
        let peds = step_pedestrians(&self.pedestrians, &self.robot, self.dt, self.t, &self.reciprocal);
        self.robot = step_robot(&self.robot, cmd, self.dt);
        self.pedestrians = peds;
        self.t += self.dt;
        if self.in_collision() {
            self.collided = true;
        }
        self.scan()
    }
}
