use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::crowd_sim::{ControlInput, RobotState};
use crate::global_planner::{path_to_reference, GlobalPath, PlanError};
use crate::perception::TrackedObstacle;

use super::objective::CostModel;
use super::shared::{rollout_user_commands, user_weight, EtaWindow};
use super::solver::solve;
use super::{PlanObstacle, PlanProblem, PlanSolution, PlannerConfig, PlannerError, SolveStatus};

/// Per-tick solver and shared-control diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub violation: f64,
    pub cost: f64,
    pub eta: f64,
    pub user_commands: usize,
    /// Smallest barrier value at the current state over perceived pedestrians.
    pub barrier_min: Option<f64>,
    pub fallback: bool,
    #[serde(skip)]
    pub solve_time_s: f64,
}

/// Stateful wrapper: user command window, warm start and fallback.
#[derive(Debug, Clone)]
pub struct LocalPlanner {
    pub cfg: PlannerConfig,
    window: EtaWindow,
    warm: Option<Vec<ControlInput>>,
}

impl LocalPlanner {
    pub fn new(cfg: PlannerConfig) -> Result<Self, PlannerError> {
        cfg.validate()?;
        Ok(Self { cfg, window: EtaWindow::new(), warm: None })
    }

    /// Registers a user command received at `t`; out-of-range values are
    /// clamped but still counted.
    pub fn record_user_command(&mut self, t: f64, u: ControlInput) {
        let u = self.cfg.clamp_input(u);
        self.window.push(t, u);
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.warm = None;
    }

    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }

    /// Current user weight at time `t`.
    pub fn eta(&mut self, t: f64) -> (f64, usize) {
        if !self.cfg.flags.shared {
            return (0.0, 0);
        }
        let i = self.window.count(t, self.cfg.eta_window_s);
        (user_weight(i, self.cfg.eta_lambda), i)
    }

    pub fn build_problem(
        &mut self,
        robot: &RobotState,
        t: f64,
        path: &GlobalPath,
        obstacles: &[TrackedObstacle],
    ) -> Result<(PlanProblem, usize), PlanError> {
        let cfg = &self.cfg;
        let n = cfg.horizon;
        let global_refs = path_to_reference(path, &robot.pose, cfg.cruise_speed, cfg.dt_s, n)?;
        let (eta, count) = self.eta(t);
        let cfg = &self.cfg;
        let user_refs = match self.window.last_command {
            Some(u) if eta > 0.0 => Some(rollout_user_commands(robot, u, n, cfg.dt_s)),
            _ => None,
        };
        let obstacles = obstacles
            .iter()
            .map(|o| PlanObstacle {
                id: o.id,
                predictions: (0..=n)
                    .map(|k| {
                        if cfg.flags.prediction {
                            o.position.add(o.velocity.scale(k as f64 * cfg.dt_s))
                        } else {
                            o.position
                        }
                    })
                    .collect(),
                area: o.area,
                radius_m: o.extent,
            })
            .collect();
        let warm_start = self.warm.as_ref().map(|w| {
            let mut s = w[1..].to_vec();
            s.push(*w.last().expect("non-empty warm start"));
            s
        });
        Ok((
            PlanProblem {
                robot: *robot,
                global_refs,
                user_refs,
                eta,
                obstacles,
                robot_extent_m: cfg.robot_extent_m,
                warm_start,
            },
            count,
        ))
    }

    /// One receding-horizon step: returns the command to apply now.
    pub fn plan_step(
        &mut self,
        robot: &RobotState,
        t: f64,
        path: &GlobalPath,
        obstacles: &[TrackedObstacle],
    ) -> Result<(ControlInput, StepDiagnostics, PlanSolution), PlannerError> {
        let (problem, count) =
            self.build_problem(robot, t, path, obstacles).map_err(|e| PlannerError::Config(e.to_string()))?;
        let model = CostModel::new(&problem, &self.cfg)?;
        let barrier_min = model.current_barriers().into_iter().reduce(f64::min);
        let start = Instant::now();
        let sol = solve(&problem, &self.cfg)?;
        let solve_time_s = start.elapsed().as_secs_f64();
        let fallback = sol.status == SolveStatus::Infeasible;
        let cmd = if fallback {
            self.warm = None;
            brake(robot.last_input, self.cfg.max_decel, self.cfg.dt_s)
        } else {
            self.warm = Some(sol.controls.clone());
            sol.controls[0]
        };
        let diag = StepDiagnostics {
            status: sol.status,
            iterations: sol.iterations,
            violation: sol.max_constraint_violation,
            cost: sol.cost,
            eta: problem.eta,
            user_commands: count,
            barrier_min,
            fallback,
            solve_time_s,
        };
        Ok((cmd, diag, sol))
    }
}

/// Decelerates toward standstill at `max_decel` with no rotation.
pub fn brake(last: ControlInput, max_decel: f64, dt: f64) -> ControlInput {
    let dv = max_decel * dt;
    let v = if last.v > 0.0 { (last.v - dv).max(0.0) } else { (last.v + dv).min(0.0) };
    ControlInput::new(v, 0.0)
}
