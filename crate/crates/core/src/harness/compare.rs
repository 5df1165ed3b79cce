use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::local_planner::Variant;

use super::episode::{run_episode, EpisodeOptions};
use super::metrics::MetricsRow;
use super::{HarnessError, Scenario};

/// One CSV line: a single run, or the per-variant mean (`seed = "mean"`).
/// Flags are written as 0/1 so that mean rows carry rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub variant: String,
    pub seed: String,
    pub min_dist: f64,
    pub collided: f64,
    pub time: f64,
    pub traj_length: f64,
    pub linear_vel_var: f64,
    pub angular_vel_var: f64,
    pub success: f64,
    pub plan_time: Option<f64>,
    #[serde(skip)]
    pub error: Option<String>,
}

impl ComparisonRow {
    pub fn run(scenario: &str, variant: Variant, seed: u64, m: &MetricsRow) -> Self {
        Self {
            scenario: scenario.to_string(),
            variant: variant.name().to_string(),
            seed: seed.to_string(),
            min_dist: m.min_dist,
            collided: f64::from(u8::from(m.collided)),
            time: m.time,
            traj_length: m.traj_length,
            linear_vel_var: m.linear_vel_var,
            angular_vel_var: m.angular_vel_var,
            success: f64::from(u8::from(m.success)),
            plan_time: m.plan_time,
            error: None,
        }
    }

    fn mean(scenario: &str, variant: Variant, rows: &[&ComparisonRow]) -> Self {
        let n = rows.len() as f64;
        let avg = |f: fn(&ComparisonRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let times: Vec<f64> = rows.iter().filter_map(|r| r.plan_time).collect();
        Self {
            scenario: scenario.to_string(),
            variant: variant.name().to_string(),
            seed: "mean".to_string(),
            min_dist: avg(|r| r.min_dist),
            collided: avg(|r| r.collided),
            time: avg(|r| r.time),
            traj_length: avg(|r| r.traj_length),
            linear_vel_var: avg(|r| r.linear_vel_var),
            angular_vel_var: avg(|r| r.angular_vel_var),
            success: avg(|r| r.success),
            plan_time: (times.len() == rows.len()).then(|| times.iter().sum::<f64>() / n),
            error: None,
        }
    }
}

/// Runs every (variant, seed) pair, possibly in parallel, and returns the
/// run rows sorted by (variant, seed) followed by one mean row per variant.
/// A failing run is reported in its row's `error` and excluded from means.
pub fn compare_planners(
    scenario: &Scenario,
    variants: &[Variant],
    seeds: &[u64],
    options: EpisodeOptions,
) -> Result<Vec<ComparisonRow>, HarnessError> {
    if variants.is_empty() {
        return Err(HarnessError::Invalid { field: "variants".into(), reason: "need at least one".into() });
    }
    let mut pairs: Vec<(Variant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    pairs.sort();
    pairs.dedup();
    let runs: Vec<(Variant, ComparisonRow)> = pairs
        .par_iter()
        .map(|&(v, seed)| {
            let row = match run_episode(scenario, v, None, seed, options) {
                Ok(r) => ComparisonRow::run(&scenario.name, v, seed, &r.metrics),
                Err(e) => ComparisonRow {
                    error: Some(e.to_string()),
                    ..ComparisonRow::run(&scenario.name, v, seed, &nan_metrics())
                },
            };
            (v, row)
        })
        .collect();
    let mut out: Vec<ComparisonRow> = runs.iter().map(|(_, r)| r.clone()).collect();
    let mut vs: Vec<Variant> = variants.to_vec();
    vs.sort();
    vs.dedup();
    for v in vs {
        let ok: Vec<&ComparisonRow> =
            runs.iter().filter(|(rv, r)| *rv == v && r.error.is_none()).map(|(_, r)| r).collect();
        if !ok.is_empty() {
            out.push(ComparisonRow::mean(&scenario.name, v, &ok));
        }
    }
    Ok(out)
}

fn nan_metrics() -> MetricsRow {
    MetricsRow {
        min_dist: f64::NAN,
        collided: false,
        time: f64::NAN,
        traj_length: f64::NAN,
        linear_vel_var: f64::NAN,
        angular_vel_var: f64::NAN,
        success: false,
        plan_time: None,
    }
}

pub fn write_csv<W: Write>(rows: &[ComparisonRow], w: W) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    wr.flush().map_err(|e| HarnessError::Io(e.to_string()))
}
