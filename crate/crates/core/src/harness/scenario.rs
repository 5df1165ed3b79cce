use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::costmap::{UpfMode, UpfParams, DEFAULT_INFLATION_RADIUS};
use crate::crowd_sim::{
    LidarConfig, Pedestrian, PedestrianPolicy, RobotState, World, DEFAULT_DT, PEDESTRIAN_RADIUS, PEDESTRIAN_SPEED,
    ROBOT_RADIUS,
};
use crate::gridworld::{OccupancyGrid, Point2, Pose2D, Rect, DEFAULT_RESOLUTION};
use crate::local_planner::{PlannerConfig, Variant};
use crate::perception::PerceptionConfig;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSpec {
    Rects {
        width_m: f64,
        height_m: f64,
        #[serde(default = "default_resolution")]
        resolution_m: f64,
        #[serde(default)]
        origin_m: [f64; 2],
        #[serde(default = "yes")]
        border: bool,
        #[serde(default)]
        rects: Vec<Rect>,
    },
    Pgm {
        pgm_file: PathBuf,
        #[serde(default = "default_resolution")]
        resolution_m: f64,
        #[serde(default)]
        origin_m: [f64; 2],
    },
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub start_m: [f64; 2],
    #[serde(default)]
    pub start_heading_rad: f64,
    pub goal_m: [f64; 2],
    #[serde(default = "robot_radius")]
    pub radius_m: f64,
}

fn robot_radius() -> f64 {
    ROBOT_RADIUS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianSpec {
    pub start_m: [f64; 2],
    #[serde(default = "ped_radius")]
    pub radius_m: f64,
    #[serde(default = "ped_speed")]
    pub preferred_speed_mps: f64,
    pub policy: PedestrianPolicy,
}

fn ped_radius() -> f64 {
    PEDESTRIAN_RADIUS
}

fn ped_speed() -> f64 {
    PEDESTRIAN_SPEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub dt_s: f64,
    pub max_duration_s: f64,
    pub goal_tolerance_m: f64,
    /// Time simulated after a collision before the episode stops.
    pub collision_grace_s: f64,
    /// Uniform per-axis perturbation of pedestrian starts, drawn from the seed.
    pub start_jitter_m: f64,
    pub inflation_radius_m: f64,
    /// Half-width, in waypoints, of the smoothing applied to the global path
    /// before it is sampled as a tracking reference.
    pub path_smoothing: usize,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            dt_s: DEFAULT_DT,
            max_duration_s: 60.0,
            goal_tolerance_m: 0.3,
            collision_grace_s: 1.0,
            start_jitter_m: 0.0,
            inflation_radius_m: DEFAULT_INFLATION_RADIUS,
            path_smoothing: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceSpec {
    pub point_m: [f64; 2],
    #[serde(default)]
    pub mode: UpfMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub map: MapSpec,
    pub robot: RobotSpec,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianSpec>,
    #[serde(default)]
    pub preference: Option<PreferenceSpec>,
    /// Route the user would have chosen, for scoring the global planner.
    #[serde(default)]
    pub ground_truth_path_m: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub lidar: LidarConfig,
    #[serde(default)]
    pub perception: PerceptionConfig,
    /// Partial planner settings; unspecified fields keep their defaults and
    /// the variant flags are always taken from the selected variant.
    #[serde(default)]
    pub planner: Value,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        Ok(s)
    }

    /// Reads and validates a scenario file; relative map paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut s = Self::from_json(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        s.validate()?;
        Ok(s)
    }

    pub fn grid(&self) -> Result<OccupancyGrid, HarnessError> {
        let g = match &self.map {
            MapSpec::Rects { width_m, height_m, resolution_m, origin_m, border, rects } => {
                OccupancyGrid::from_rects(*width_m, *height_m, *resolution_m, Point2::from(*origin_m), *border, rects)?
            }
            MapSpec::Pgm { pgm_file, resolution_m, origin_m } => {
                let path = match &self.base_dir {
                    Some(d) if pgm_file.is_relative() => d.join(pgm_file),
                    _ => pgm_file.clone(),
                };
                let text =
                    fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
                OccupancyGrid::from_pgm(&text, *resolution_m, Point2::from(*origin_m))?
            }
        };
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid =
            |field: &str, why: &str| Err(HarnessError::Invalid { field: field.to_string(), reason: why.to_string() });
        if !(self.sim.max_duration_s > 0.0) {
            return invalid("sim.max_duration_s", "must be > 0");
        }
        if !(self.sim.dt_s > 0.0) {
            return invalid("sim.dt_s", "must be > 0");
        }
        if !(self.sim.goal_tolerance_m > 0.0) {
            return invalid("sim.goal_tolerance_m", "must be > 0");
        }
        if !(self.robot.radius_m > 0.0) {
            return invalid("robot.radius_m", "must be > 0");
        }
        if let Err(e) = self.perception.validate() {
            return invalid("perception", &e);
        }
        if let Err(e) = self.planner_config(Variant::SsMpcDcbf) {
            return invalid("planner", &e.to_string());
        }
        let grid = self.grid()?;
        for (field, p) in [("robot.start_m", self.robot.start_m), ("robot.goal_m", self.robot.goal_m)] {
            let pt = Point2::from(p);
            if grid.world_to_grid(pt).cell().is_none() {
                return invalid(field, "outside the map");
            }
            if grid.occupied_at(pt) {
                return invalid(field, "inside an obstacle");
            }
        }
        for (k, p) in self.pedestrians.iter().enumerate() {
            if !(p.radius_m > 0.0) || !(p.preferred_speed_mps >= 0.0) {
                return invalid(&format!("pedestrians[{k}]"), "radius must be > 0 and speed >= 0");
            }
        }
        Ok(())
    }

    pub fn planner_config(&self, variant: Variant) -> Result<PlannerConfig, HarnessError> {
        let mut cfg = PlannerConfig::default();
        if !self.planner.is_null() {
            cfg = merge_config(&cfg, &self.planner)?;
        }
        cfg.flags = variant.flags();
        cfg.dt_s = self.sim.dt_s;
        cfg.validate().map_err(|e| HarnessError::Invalid { field: "planner".into(), reason: e.to_string() })?;
        Ok(cfg)
    }

    pub fn upf_params(&self) -> Option<UpfParams> {
        self.preference.map(|p| UpfParams {
            mode: p.mode,
            ..UpfParams::new(Point2::from(p.point_m), Point2::from(self.robot.start_m))
        })
    }

    pub fn ground_truth(&self) -> Option<Vec<Point2>> {
        self.ground_truth_path_m.as_ref().map(|v| v.iter().map(|&p| Point2::from(p)).collect())
    }

    pub fn start_pose(&self) -> Pose2D {
        Pose2D::new(self.robot.start_m[0], self.robot.start_m[1], self.robot.start_heading_rad)
    }

    pub fn pedestrians(&self, seed: u64) -> Vec<Pedestrian> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = self.sim.start_jitter_m;
        self.pedestrians
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let (dx, dy) = if j > 0.0 { (rng.random_range(-j..=j), rng.random_range(-j..=j)) } else { (0.0, 0.0) };
                Pedestrian {
                    id: k as u32 + 1,
                    position: Point2::new(p.start_m[0] + dx, p.start_m[1] + dy),
                    velocity: Point2::default(),
                    radius: p.radius_m,
                    preferred_speed: p.preferred_speed_mps,
                    policy: p.policy.clone(),
                }
            })
            .collect()
    }

    pub fn world(&self, seed: u64) -> Result<World, HarnessError> {
        let robot = RobotState::new(self.start_pose(), self.robot.radius_m);
        // Pedestrian jitter and lidar noise use independent streams.
        Ok(World::new(
            self.grid()?,
            robot,
            self.pedestrians(seed),
            self.sim.dt_s,
            self.lidar,
            seed ^ 0x9e37_79b9_7f4a_7c15,
        ))
    }
}

/// Overlays the fields present in `patch` onto `base`.
pub fn merge_config<T>(base: &T, patch: &Value) -> Result<T, HarnessError>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut v = serde_json::to_value(base).map_err(|e| HarnessError::Parse(e.to_string()))?;
    merge_value(&mut v, patch);
    serde_json::from_value(v).map_err(|e| HarnessError::Parse(e.to_string()))
}

fn merge_value(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, pv) in p {
                match b.get_mut(k) {
                    Some(bv) => merge_value(bv, pv),
                    None => {
                        b.insert(k.clone(), pv.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Parses `key=value` (value as JSON, or a bare string) into a one-field patch.
/// Dotted keys address nested fields.
pub fn parse_override(spec: &str) -> Result<Value, HarnessError> {
    let (key, raw) =
        spec.split_once('=').ok_or_else(|| HarnessError::Parse(format!("override `{spec}` is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut out = value;
    for part in key.rsplit('.') {
        let mut m = serde_json::Map::new();
        m.insert(part.to_string(), out);
        out = Value::Object(m);
    }
    Ok(out)
}
