use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::costmap::{build_navigation_costmap, Costmap, UpfParams};
use crate::crowd_sim::{ControlInput, Scan, World};
use crate::global_planner::{plan_astar, AstarWeights, GlobalPath, PlanError};
use crate::gridworld::{Point2, Pose2D};
use crate::local_planner::{LocalPlanner, StepDiagnostics, Variant};
use crate::perception::{Perception, SocialArea, TrackedObstacle};

use super::metrics::{compute_metrics, MetricsRow};
use super::{HarnessError, Scenario};

/// One user command event for scripted shared-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserCommand {
    pub t_s: f64,
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpisodeOptions {
    /// Record wall-clock solve times (makes logs non-reproducible).
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub dt_s: f64,
    pub robot_radius_m: f64,
    pub pedestrian_radii_m: Vec<f64>,
    pub goal_m: Point2,
    pub global_path: Vec<Point2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedRecord {
    pub id: u32,
    pub position: Point2,
    pub velocity: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: u32,
    pub position: Point2,
    pub velocity: Point2,
    pub area: SocialArea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub t: f64,
    /// Robot pose when the command was computed.
    pub robot: Pose2D,
    pub cmd: ControlInput,
    pub pedestrians: Vec<PedRecord>,
    pub tracks: Vec<TrackRecord>,
    pub diag: StepDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_time_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Goal,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub end_t: f64,
    pub reason: EndReason,
    pub success: bool,
    pub collided: bool,
    pub collision_t: Option<f64>,
    pub final_robot: Pose2D,
    pub final_pedestrians: Vec<PedRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub ticks: Vec<TickRecord>,
    pub outcome: EpisodeOutcome,
}

/// One line of the line-delimited log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogLine {
    Header(EpisodeHeader),
    Tick(TickRecord),
    Outcome(EpisodeOutcome),
}

impl EpisodeLog {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut line = |l: &LogLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")
        };
        line(&LogLine::Header(self.header.clone()))?;
        for t in &self.ticks {
            line(&LogLine::Tick(t.clone()))?;
        }
        line(&LogLine::Outcome(self.outcome.clone()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, HarnessError> {
        let mut header = None;
        let mut ticks = Vec::new();
        let mut outcome = None;
        for (k, line) in r.lines().enumerate() {
            let line = line.map_err(|e| HarnessError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| HarnessError::Parse(format!("line {}: {e}", k + 1)))? {
                LogLine::Header(h) => header = Some(h),
                LogLine::Tick(t) => ticks.push(t),
                LogLine::Outcome(o) => outcome = Some(o),
            }
        }
        Ok(Self {
            header: header.ok_or_else(|| HarnessError::Parse("log has no header".into()))?,
            ticks,
            outcome: outcome.ok_or_else(|| HarnessError::Parse("log has no outcome".into()))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub log: EpisodeLog,
    pub metrics: MetricsRow,
}

/// Plans a global path on the scenario map, through the preference valley
/// when `upf` is given.
pub fn plan_global(
    scenario: &Scenario,
    start: Point2,
    goal: Point2,
    upf: Option<&UpfParams>,
) -> Result<(GlobalPath, Costmap), HarnessError> {
    let grid = scenario.grid()?;
    let costmap = build_navigation_costmap(&grid, scenario.sim.inflation_radius_m, upf)?;
    let cell = |which: &'static str, p: Point2| costmap.world_to_grid(p).cell().ok_or(PlanError::BadRequest(which));
    let s = cell("start outside the map", start)?;
    let g = cell("goal outside the map", goal)?;
    let path = plan_astar(&costmap, s, g, &AstarWeights::default())?;
    Ok((path, costmap))
}

/// A running closed-loop episode that can be stepped and steered.
pub struct Session {
    pub scenario: Scenario,
    pub variant: Variant,
    pub seed: u64,
    pub world: World,
    pub perception: Perception,
    pub planner: LocalPlanner,
    pub goal: Point2,
    pub preference: Option<Point2>,
    pub path: GlobalPath,
    reference: GlobalPath,
    pub costmap: Costmap,
    scan: Scan,
    pub ticks: Vec<TickRecord>,
    pub last_obstacles: Vec<TrackedObstacle>,
    tick: usize,
    max_ticks: usize,
    grace_ticks: usize,
    collision_tick: Option<usize>,
    pub outcome: Option<EpisodeOutcome>,
    options: EpisodeOptions,
}

impl Session {
    pub fn new(
        scenario: &Scenario,
        variant: Variant,
        seed: u64,
        options: EpisodeOptions,
    ) -> Result<Self, HarnessError> {
        let mut world = scenario.world(seed)?;
        let cfg = scenario.planner_config(variant)?;
        let planner = LocalPlanner::new(cfg)?;
        let goal = Point2::from(scenario.robot.goal_m);
        let preference = scenario.preference.map(|p| Point2::from(p.point_m));
        let (path, costmap) = plan_global(scenario, world.robot.pose.position(), goal, scenario.upf_params().as_ref())?;
        let reference = path.smoothed(scenario.sim.path_smoothing);
        let scan = world.scan();
        let dt = scenario.sim.dt_s;
        Ok(Self {
            scenario: scenario.clone(),
            variant,
            seed,
            world,
            perception: Perception::new(scenario.perception),
            planner,
            goal,
            preference,
            path,
            reference,
            costmap,
            scan,
            ticks: Vec::new(),
            last_obstacles: Vec::new(),
            tick: 0,
            max_ticks: (scenario.sim.max_duration_s / dt).round() as usize,
            grace_ticks: (scenario.sim.collision_grace_s / dt).round() as usize,
            collision_tick: None,
            outcome: None,
            options,
        })
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn time(&self) -> f64 {
        self.world.t
    }

    pub fn tick_index(&self) -> usize {
        self.tick
    }

    /// Registers a user command at the current tick boundary.
    pub fn push_user_command(&mut self, u: ControlInput) {
        self.planner.record_user_command(self.world.t, u);
    }

    fn replan(&mut self) -> Result<(), HarnessError> {
        let upf = self.preference.map(|p| UpfParams {
            mode: self.scenario.preference.map(|s| s.mode).unwrap_or_default(),
            ..UpfParams::new(p, self.world.robot.pose.position())
        });
        let (path, costmap) = plan_global(&self.scenario, self.world.robot.pose.position(), self.goal, upf.as_ref())?;
        self.reference = path.smoothed(self.scenario.sim.path_smoothing);
        self.path = path;
        self.costmap = costmap;
        self.planner.reset_warm_start();
        Ok(())
    }

    pub fn set_preference(&mut self, p: Option<Point2>) -> Result<(), HarnessError> {
        let old = self.preference;
        self.preference = p;
        self.replan().inspect_err(|_| self.preference = old)
    }

    pub fn set_goal(&mut self, g: Point2) -> Result<(), HarnessError> {
        let old = self.goal;
        self.goal = g;
        self.replan().inspect_err(|_| self.goal = old)
    }

    pub fn set_variant(&mut self, v: Variant) -> Result<(), HarnessError> {
        let mut cfg = self.scenario.planner_config(v)?;
        cfg.dt_s = self.scenario.sim.dt_s;
        self.planner = LocalPlanner::new(cfg)?;
        self.variant = v;
        Ok(())
    }

    fn ped_records(&self) -> Vec<PedRecord> {
        self.world
            .pedestrians
            .iter()
            .map(|p| PedRecord { id: p.id, position: p.position, velocity: p.velocity })
            .collect()
    }

    /// Perceive, plan and advance the world by one tick.
    pub fn step(&mut self) -> Result<&TickRecord, HarnessError> {
        if self.is_done() {
            return Err(HarnessError::Invalid { field: "session".into(), reason: "episode already finished".into() });
        }
        let dt = self.scenario.sim.dt_s;
        let t = self.world.t;
        let obstacles = self.perception.process(&self.scan, &self.world.grid, dt);
        let robot = self.world.robot;
        let (cmd, diag, _) = self.planner.plan_step(&robot, t, &self.reference, &obstacles)?;
        let record = TickRecord {
            tick: self.tick,
            t,
            robot: robot.pose,
            cmd,
            pedestrians: self.ped_records(),
            tracks: obstacles
                .iter()
                .map(|o| TrackRecord { id: o.id, position: o.position, velocity: o.velocity, area: o.area })
                .collect(),
            solve_time_s: self.options.timing.then_some(diag.solve_time_s),
            diag,
        };
        self.last_obstacles = obstacles;
        self.scan = self.world.step(cmd);
        self.tick += 1;
        self.ticks.push(record);
        self.check_end();
        Ok(self.ticks.last().expect("just pushed"))
    }

    fn check_end(&mut self) {
        if self.world.collided && self.collision_tick.is_none() {
            self.collision_tick = Some(self.tick);
        }
        let at_goal = self.world.robot.pose.position().dist(self.goal) <= self.scenario.sim.goal_tolerance_m;
        let reason = match self.collision_tick {
            Some(c) if self.tick >= c + self.grace_ticks => Some(EndReason::Collision),
            None if at_goal => Some(EndReason::Goal),
            _ if self.tick >= self.max_ticks => Some(EndReason::Timeout),
            _ => None,
        };
        if let Some(reason) = reason {
            self.outcome = Some(EpisodeOutcome {
                end_t: self.world.t,
                reason,
                success: reason == EndReason::Goal,
                collided: self.world.collided,
                collision_t: self.collision_tick.map(|c| c as f64 * self.scenario.sim.dt_s),
                final_robot: self.world.robot.pose,
                final_pedestrians: self.ped_records(),
            });
        }
    }

    pub fn header(&self) -> EpisodeHeader {
        EpisodeHeader {
            scenario: self.scenario.name.clone(),
            variant: self.variant,
            seed: self.seed,
            dt_s: self.scenario.sim.dt_s,
            robot_radius_m: self.world.robot.radius,
            pedestrian_radii_m: self.world.pedestrians.iter().map(|p| p.radius).collect(),
            goal_m: self.goal,
            global_path: self.path.waypoints.clone(),
        }
    }

    /// A copy of the finished episode log.
    pub fn log(&self) -> Option<EpisodeLog> {
        Some(EpisodeLog { header: self.header(), ticks: self.ticks.clone(), outcome: self.outcome.clone()? })
    }

    pub fn into_log(self) -> Option<EpisodeLog> {
        let header = self.header();
        Some(EpisodeLog { header, ticks: self.ticks, outcome: self.outcome? })
    }
}

/// Runs a scenario to completion. Scripted user commands are delivered at
/// the first tick boundary at or after their timestamp.
pub fn run_episode(
    scenario: &Scenario,
    variant: Variant,
    user_script: Option<&[UserCommand]>,
    seed: u64,
    options: EpisodeOptions,
) -> Result<EpisodeResult, HarnessError> {
    let mut session = Session::new(scenario, variant, seed, options)?;
    let mut script: Vec<UserCommand> = user_script.map(<[UserCommand]>::to_vec).unwrap_or_default();
    script.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
    let mut next = 0;
    let eps = 1e-9;
    while !session.is_done() {
        while next < script.len() && script[next].t_s <= session.time() + eps {
            let c = script[next];
            session.push_user_command(ControlInput::new(c.v, c.omega));
            next += 1;
        }
        session.step()?;
    }
    let log = session.into_log().expect("finished episode");
    let metrics = compute_metrics(&log);
    Ok(EpisodeResult { log, metrics })
}

/// Replays a command sequence open-loop from the scenario start and
/// returns the visited robot poses (start included).
pub fn replay_commands(scenario: &Scenario, seed: u64, commands: &[ControlInput]) -> Result<Vec<Pose2D>, HarnessError> {
    let mut world = scenario.world(seed)?;
    let mut poses = vec![world.robot.pose];
    for &c in commands {
        world.step(c);
        poses.push(world.robot.pose);
    }
    Ok(poses)
}

/// Hash of the exact bit patterns of a pose sequence.
pub fn trajectory_hash(poses: &[Pose2D]) -> u64 {
    let mut h = DefaultHasher::new();
    for p in poses {
        p.x.to_bits().hash(&mut h);
        p.y.to_bits().hash(&mut h);
        p.theta.to_bits().hash(&mut h);
    }
    h.finish()
}

impl EpisodeLog {
    /// Robot poses at every tick plus the final pose.
    pub fn robot_poses(&self) -> Vec<Pose2D> {
        let mut v: Vec<Pose2D> = self.ticks.iter().map(|t| t.robot).collect();
        v.push(self.outcome.final_robot);
        v
    }

    pub fn commands(&self) -> Vec<ControlInput> {
        self.ticks.iter().map(|t| t.cmd).collect()
    }
}
