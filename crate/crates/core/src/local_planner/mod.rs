//! Receding-horizon local planner with discrete control barrier functions,
//! social keep-out areas and shared user control.

mod barrier;
mod objective;
mod shared;
mod solver;
mod step;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crowd_sim::{ControlInput, RobotState, ROBOT_RADIUS};
use crate::gridworld::{Point2, Pose2D};
use crate::perception::SocialArea;

pub use barrier::{barrier_value, barrier_with_gradient, dcbf_residual, KeepOut};
pub use objective::{constraint_values, objective_gradient, objective_value, rollout, CostModel};
pub use shared::{blend_reference, rollout_user_commands, user_weight, EtaWindow};
pub use solver::solve;
pub use step::{LocalPlanner, StepDiagnostics};

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("reference length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("obstacle {id} has {got} predictions, expected {expected}")]
    PredictionLength { id: u32, expected: usize, got: usize },
    #[error("unknown planner variant `{0}`")]
    UnknownVariant(String),
}

/// The four planner configurations compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Mpc,
    MpcDcbf,
    SocialMpc,
    SsMpcDcbf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mpc, Variant::MpcDcbf, Variant::SocialMpc, Variant::SsMpcDcbf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mpc => "mpc",
            Variant::MpcDcbf => "mpc-dcbf",
            Variant::SocialMpc => "social-mpc",
            Variant::SsMpcDcbf => "ss-mpc-dcbf",
        }
    }

    pub fn flags(self) -> VariantFlags {
        let (cbf, social_area, shared, prediction) = match self {
            Variant::Mpc => (false, false, false, false),
            Variant::MpcDcbf => (true, false, false, true),
            Variant::SocialMpc => (false, true, false, true),
            Variant::SsMpcDcbf => (true, true, true, true),
        };
        VariantFlags { cbf, social_area, shared, prediction }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = PlannerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| PlannerError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantFlags {
    pub cbf: bool,
    pub social_area: bool,
    pub shared: bool,
    pub prediction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub dt_s: f64,
    pub gamma: f64,
    pub q_state: [f64; 3],
    pub q_input: [f64; 2],
    pub q_terminal: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub flags: VariantFlags,
    /// Center-to-center clearance for the circle constraint of plain MPC.
    pub d_safe_m: f64,
    /// Constraint violation accepted as feasible.
    pub tolerance: f64,
    /// Projected-gradient norm accepted as stationary.
    pub stationarity_tol: f64,
    /// Projected-gradient iterations per penalty round.
    pub max_iterations: usize,
    pub max_penalty_rounds: usize,
    pub eta_lambda: f64,
    pub eta_window_s: f64,
    pub cruise_speed: f64,
    pub max_decel: f64,
    /// Radius of the robot's own keep-out circle.
    pub robot_extent_m: f64,
    /// Slack subtracted from every predicted constraint after the first,
    /// absorbing prediction error so the realized barrier stays non-negative.
    pub barrier_margin_m: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt_s: 0.1,
            gamma: 0.4,
            q_state: [10.0, 10.0, 1.0],
            q_input: [1.0, 0.5],
            q_terminal: 10.0,
            v_min: -0.3,
            v_max: 1.2,
            omega_max: 1.2,
            flags: Variant::SsMpcDcbf.flags(),
            d_safe_m: ROBOT_RADIUS + crate::crowd_sim::PEDESTRIAN_RADIUS + 0.2,
            tolerance: 1e-4,
            stationarity_tol: 1e-3,
            max_iterations: 200,
            max_penalty_rounds: 12,
            eta_lambda: 0.7,
            eta_window_s: 1.0,
            cruise_speed: 1.0,
            max_decel: 1.0,
            robot_extent_m: ROBOT_RADIUS,
            barrier_margin_m: 0.02,
        }
    }
}

impl PlannerConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self { flags: variant.flags(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.horizon < 1 {
            return bad("horizon must be >= 1");
        }
        if !(self.v_min < self.v_max) {
            return bad("v_min must be < v_max");
        }
        if !(self.omega_max > 0.0) {
            return bad("omega_max must be > 0");
        }
        if !(self.tolerance > 0.0) || !(self.stationarity_tol > 0.0) {
            return bad("tolerances must be > 0");
        }
        if !(self.dt_s > 0.0) {
            return bad("dt_s must be > 0");
        }
        if self.q_state.iter().chain(&self.q_input).any(|w| !(*w >= 0.0)) || !(self.q_terminal >= 0.0) {
            return bad("weights must be >= 0");
        }
        if self.max_iterations == 0 || self.max_penalty_rounds == 0 {
            return bad("iteration budgets must be >= 1");
        }
        if !(self.eta_lambda > 0.0) || !(self.eta_window_s > 0.0) {
            return bad("eta_lambda and eta_window_s must be > 0");
        }
        if !(self.max_decel > 0.0)
            || !(self.robot_extent_m >= 0.0)
            || !(self.d_safe_m >= 0.0)
            || !(self.barrier_margin_m >= 0.0)
        {
            return bad("max_decel, robot_extent_m, d_safe_m and barrier_margin_m must be non-negative");
        }
        Ok(())
    }

    pub fn clamp_input(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(u.v.clamp(self.v_min, self.v_max), u.omega.clamp(-self.omega_max, self.omega_max))
    }
}

/// A pedestrian as seen over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanObstacle {
    pub id: u32,
    /// Positions at steps 0..=N.
    pub predictions: Vec<Point2>,
    pub area: SocialArea,
    /// Radius of the circle enclosing the detected returns.
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanProblem {
    pub robot: RobotState,
    /// Reference poses for steps 1..=N.
    pub global_refs: Vec<Pose2D>,
    pub user_refs: Option<Vec<Pose2D>>,
    pub eta: f64,
    pub obstacles: Vec<PlanObstacle>,
    /// Radius of the robot's own keep-out circle.
    pub robot_extent_m: f64,
    pub warm_start: Option<Vec<ControlInput>>,
}

impl PlanProblem {
    pub fn validate(&self, cfg: &PlannerConfig) -> Result<(), PlannerError> {
        let n = cfg.horizon;
        if self.global_refs.len() != n {
            return Err(PlannerError::LengthMismatch { expected: n, got: self.global_refs.len() });
        }
        if let Some(u) = &self.user_refs {
            if u.len() != n {
                return Err(PlannerError::LengthMismatch { expected: n, got: u.len() });
            }
        }
        for o in &self.obstacles {
            if o.predictions.len() != n + 1 {
                return Err(PlannerError::PredictionLength { id: o.id, expected: n + 1, got: o.predictions.len() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSolution {
    pub controls: Vec<ControlInput>,
    pub predicted_states: Vec<Pose2D>,
    pub cost: f64,
    pub max_constraint_violation: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}
