//! Scenario files, closed-loop episodes, metrics and planner comparisons.

mod compare;
mod episode;
mod metrics;
mod scenario;

use thiserror::Error;

pub use compare::{compare_planners, write_csv, ComparisonRow};
pub use episode::{
    plan_global, replay_commands, run_episode, trajectory_hash, EndReason, EpisodeHeader, EpisodeLog, EpisodeOptions,
    EpisodeOutcome, EpisodeResult, LogLine, PedRecord, Session, TickRecord, TrackRecord, UserCommand,
};
pub use metrics::{compute_metrics, MetricsRow};
pub use scenario::{
    merge_config, parse_override, MapSpec, PedestrianSpec, PreferenceSpec, RobotSpec, Scenario, SimSpec,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Grid(#[from] crate::gridworld::GridError),
    #[error(transparent)]
    Costmap(#[from] crate::costmap::CostmapError),
    #[error(transparent)]
    Plan(#[from] crate::global_planner::PlanError),
    #[error(transparent)]
    Planner(#[from] crate::local_planner::PlannerError),
}
