use serde::{Deserialize, Serialize};

use crate::gridworld::{normalize_angle, Point2};
use crate::perception::{social_radius, social_radius_derivative, SocialArea};

/// Keep-out shape around one pedestrian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepOut {
    /// Asymmetric social area; only heading and spreads are used, the
    /// center comes from the evaluation point.
    Social(SocialArea),
    /// Plain disc of the given radius.
    Disc(f64),
}

impl KeepOut {
    /// Extent along the direction from `ped` to `robot`, plus its derivative
    /// with respect to the relative bearing.
    fn extent(&self, robot: Point2, ped: Point2) -> (f64, f64) {
        match self {
            KeepOut::Disc(r) => (*r, 0.0),
            KeepOut::Social(area) => {
                let d = robot.sub(ped);
                let delta = normalize_angle(d.y.atan2(d.x) - area.heading);
                (social_radius(area, delta), social_radius_derivative(area, delta))
            }
        }
    }
}

const MIN_SEPARATION: f64 = 1e-9;

/// Signed clearance between the robot's extent and a pedestrian keep-out.
pub fn barrier_value(robot_pos: Point2, l_robot: f64, ped_pos: Point2, shape: &KeepOut) -> f64 {
    let (l, _) = shape.extent(robot_pos, ped_pos);
    robot_pos.dist(ped_pos) - l_robot - l
}

/// Barrier value and its gradient with respect to the robot position.
pub fn barrier_with_gradient(robot_pos: Point2, l_robot: f64, ped_pos: Point2, shape: &KeepOut) -> (f64, Point2) {
    let d = robot_pos.sub(ped_pos);
    let dist = d.norm();
    let (l, dl) = shape.extent(robot_pos, ped_pos);
    let h = dist - l_robot - l;
    if dist < MIN_SEPARATION {
        return (h, Point2::default());
    }
    let radial = d.scale(1.0 / dist);
    let tangential = Point2::new(-d.y, d.x).scale(1.0 / (dist * dist));
    (h, radial.sub(tangential.scale(dl)))
}

/// `h_next - (1 - gamma) h_curr`; the decay condition holds iff this is >= 0.
pub fn dcbf_residual(h_next: f64, h_curr: f64, gamma: f64) -> f64 {
    h_next - (1.0 - gamma) * h_curr
}
