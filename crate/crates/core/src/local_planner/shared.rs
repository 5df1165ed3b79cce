use std::collections::VecDeque;

use crate::crowd_sim::{step_robot, ControlInput, RobotState};
use crate::gridworld::{normalize_angle, Pose2D};

use super::PlannerError;

/// User authority after `count` commands inside the window.
pub fn user_weight(count: usize, lambda: f64) -> f64 {
    1.0 - (-lambda * count as f64).exp()
}

/// Poses 1..=N reached by holding `u_user` from the current state.
pub fn rollout_user_commands(robot: &RobotState, u_user: ControlInput, n: usize, dt: f64) -> Vec<Pose2D> {
    let mut s = *robot;
    (0..n)
        .map(|_| {
            s = step_robot(&s, u_user, dt);
            s.pose
        })
        .collect()
}

/// Per-step blend of the autonomous and user references: positions
/// linearly, headings along the shorter arc.
pub fn blend_reference(global: &[Pose2D], user: &[Pose2D], eta: f64) -> Result<Vec<Pose2D>, PlannerError> {
    if global.len() != user.len() {
        return Err(PlannerError::LengthMismatch { expected: global.len(), got: user.len() });
    }
    if eta <= 0.0 {
        return Ok(global.to_vec());
    }
    if eta >= 1.0 {
        return Ok(user.to_vec());
    }
    Ok(global
        .iter()
        .zip(user)
        .map(|(g, u)| Pose2D {
            x: eta * u.x + (1.0 - eta) * g.x,
            y: eta * u.y + (1.0 - eta) * g.y,
            theta: normalize_angle(g.theta + eta * normalize_angle(u.theta - g.theta)),
        })
        .collect())
}

const WINDOW_EPS: f64 = 1e-9;

/// Sliding window of user command arrivals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EtaWindow {
    stamps: VecDeque<f64>,
    pub last_command: Option<ControlInput>,
}

impl EtaWindow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a command received at `t`, already clamped by the caller.
    pub fn push(&mut self, t: f64, u: ControlInput) {
        self.stamps.push_back(t);
        self.last_command = Some(u);
    }

    /// Commands received within the last `window` seconds up to `now`.
    pub fn count(&mut self, now: f64, window: f64) -> usize {
        while self.stamps.front().is_some_and(|&t| now - t >= window - WINDOW_EPS) {
            self.stamps.pop_front();
        }
        self.stamps.iter().filter(|&&t| t <= now + WINDOW_EPS).count()
    }

    pub fn clear(&mut self) {
        self.stamps.clear();
        self.last_command = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn weight_values() {
        assert_eq!(user_weight(0, 0.7), 0.0);
        assert!((user_weight(1, 0.7) - 0.503_414_696_208_590_5).abs() < 1e-12);
        assert!((user_weight(5, 0.7) - 0.969_802_616_577_118_3).abs() < 1e-12);
        assert!(user_weight(200, 0.7) > 1.0 - 1e-12);
        let mut prev = -1.0;
        for i in 0..30 {
            let w = user_weight(i, 0.7);
            assert!(w > prev && w < 1.0);
            prev = w;
        }
    }

    #[test]
    fn rollouts() {
        let r = RobotState::new(Pose2D::new(1.0, 2.0, 0.3), 0.6);
        assert!(rollout_user_commands(&r, ControlInput::ZERO, 5, 0.1).iter().all(|p| *p == r.pose));
        let r0 = RobotState::new(Pose2D::new(0.0, 0.0, 0.0), 0.6);
        let line = rollout_user_commands(&r0, ControlInput::new(1.0, 0.0), 4, 0.1);
        for (k, p) in line.iter().enumerate() {
            assert!((p.x - 0.1 * (k + 1) as f64).abs() < 1e-12 && p.y == 0.0);
        }
        let u = ControlInput::new(1.0, 0.7);
        let arc = rollout_user_commands(&r, u, 6, 0.1);
        let mut s = r;
        for p in arc {
            s = step_robot(&s, u, 0.1);
            assert_eq!(p, s.pose);
        }
    }

    #[test]
    fn blending_endpoints_and_arc() {
        let g = vec![Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(1.0, 1.0, 3.0)];
        let u = vec![Pose2D::new(2.0, 0.0, FRAC_PI_2), Pose2D::new(0.0, 1.0, -3.0)];
        assert_eq!(blend_reference(&g, &u, 0.0).unwrap(), g);
        assert_eq!(blend_reference(&g, &u, 1.0).unwrap(), u);
        let half = blend_reference(&g, &u, 0.5).unwrap();
        assert!((half[0].theta - FRAC_PI_4).abs() < 1e-15);
        assert!((half[0].x - 1.0).abs() < 1e-15);
        // 3.0 and -3.0 are closest through pi
        assert!(half[1].theta.abs() > 3.0);
        assert!(blend_reference(&g, &u[..1], 0.5).is_err());
    }

    #[test]
    fn window_counts_and_expires() {
        let mut w = EtaWindow::new();
        for k in 0..5 {
            w.push(0.2 * k as f64, ControlInput::new(9.0, 0.0));
        }
        assert_eq!(w.count(0.9, 1.0), 5);
        assert!((user_weight(w.count(0.9, 1.0), 0.7) - 0.9698).abs() < 1e-4);
        assert_eq!(w.count(1.1, 1.0), 4);
        assert_eq!(w.count(1.8 + 1.0, 1.0), 0);
        assert_eq!(user_weight(w.count(3.0, 1.0), 0.7), 0.0);
    }
}
