use serde::{Deserialize, Serialize};

use crate::gridworld::Point2;

use super::episode::{EpisodeLog, PedRecord};

/// Per-episode evaluation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Smallest surface-to-surface robot-pedestrian gap, floored at 0;
    /// infinite when the scenario has no pedestrians.
    pub min_dist: f64,
    pub collided: bool,
    pub time: f64,
    pub traj_length: f64,
    pub linear_vel_var: f64,
    pub angular_vel_var: f64,
    pub success: bool,
    /// Mean wall-clock solve time, only when timing was recorded.
    pub plan_time: Option<f64>,
}

fn population_variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64
}

fn gap(robot: Point2, robot_r: f64, peds: &[PedRecord], radii: &[f64]) -> f64 {
    peds.iter()
        .map(|p| {
            let r = radii.get(p.id as usize - 1).copied().unwrap_or(0.0);
            (p.position.dist(robot) - robot_r - r).max(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn compute_metrics(log: &EpisodeLog) -> MetricsRow {
    let h = &log.header;
    let o = &log.outcome;
    let mut min_dist = log
        .ticks
        .iter()
        .map(|t| gap(t.robot.position(), h.robot_radius_m, &t.pedestrians, &h.pedestrian_radii_m))
        .fold(gap(o.final_robot.position(), h.robot_radius_m, &o.final_pedestrians, &h.pedestrian_radii_m), f64::min);
    if o.collided {
        min_dist = 0.0;
    }
    let poses = log.robot_poses();
    let traj_length = poses.windows(2).map(|w| w[0].position().dist(w[1].position())).sum();
    let timed: Vec<f64> = log.ticks.iter().filter_map(|t| t.solve_time_s).collect();
    MetricsRow {
        min_dist,
        collided: o.collided,
        time: o.end_t,
        traj_length,
        linear_vel_var: population_variance(log.ticks.iter().map(|t| t.cmd.v)),
        angular_vel_var: population_variance(log.ticks.iter().map(|t| t.cmd.omega)),
        success: o.success,
        plan_time: (!timed.is_empty()).then(|| timed.iter().sum::<f64>() / timed.len() as f64),
    }
}
