use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use socialnav::bridge::{serve, ServeOptions};
use socialnav::costmap::UpfParams;
use socialnav::global_planner::path_error;
use socialnav::gridworld::Point2;
use socialnav::harness::{
    compare_planners, merge_config, parse_override, plan_global, run_episode, write_csv, ComparisonRow, EpisodeOptions,
    MapSpec, Scenario, UserCommand,
};
use socialnav::local_planner::Variant;

#[derive(Parser)]
#[command(name = "socialnav", about = "Shared-control social navigation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "ss-mpc-dcbf")]
        planner: Variant,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// JSON array of {t_s, v, omega} user commands.
        #[arg(long)]
        user_script: Option<PathBuf>,
        /// Record solve wall time (output is then not reproducible).
        #[arg(long)]
        timing: bool,
        /// Scenario field override, e.g. planner.gamma=0.3 (repeatable).
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Run planners over seeds and write a metrics table.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "mpc,mpc-dcbf,social-mpc,ss-mpc-dcbf")]
        planners: Vec<Variant>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        timing: bool,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Plan a global path and print it as JSON.
    PlanGlobal {
        /// Scenario JSON (its map is used) or an ASCII PGM image.
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_parser = parse_point)]
        start: Point2,
        #[arg(long, value_parser = parse_point)]
        goal: Point2,
        #[arg(long, value_parser = parse_point)]
        pref: Option<Point2>,
        /// JSON array of [x, y] points to score the path against.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Cell size for PGM maps.
        #[arg(long, default_value_t = 0.05)]
        resolution: f64,
    },
    /// Host the live simulation over a websocket.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "ss-mpc-dcbf")]
        planner: Variant,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
}

fn parse_point(s: &str) -> Result<Point2, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected X,Y, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok(Point2::new(p(x)?, p(y)?))
}

fn load_scenario(path: &Path, overrides: &[String]) -> Result<Scenario> {
    let mut s = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    if overrides.is_empty() {
        return Ok(s);
    }
    let base_dir = s.base_dir.clone();
    for o in overrides {
        s = merge_config(&s, &parse_override(o)?)?;
    }
    s.base_dir = base_dir;
    s.validate()?;
    Ok(s)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, planner, seed, out, user_script, timing, overrides } => {
            let sc = load_scenario(&scenario, &overrides)?;
            let script: Option<Vec<UserCommand>> = match user_script {
                Some(p) => Some(serde_json::from_str(&fs::read_to_string(&p)?).context("parsing user script")?),
                None => None,
            };
            let seed = seed.unwrap_or(sc.seed);
            let res = run_episode(&sc, planner, script.as_deref(), seed, EpisodeOptions { timing })?;
            fs::create_dir_all(&out)?;
            res.log.write_jsonl(BufWriter::new(fs::File::create(out.join("episode.jsonl"))?))?;
            let rows = [ComparisonRow::run(&sc.name, planner, seed, &res.metrics)];
            write_csv(&rows, fs::File::create(out.join("metrics.csv"))?)?;
            println!("{}", serde_json::to_string_pretty(&res.metrics)?);
        }
        Command::Compare { scenario, planners, seeds, csv, timing, overrides } => {
            let sc = load_scenario(&scenario, &overrides)?;
            let rows = compare_planners(&sc, &planners, &seeds, EpisodeOptions { timing })?;
            for r in &rows {
                if let Some(e) = &r.error {
                    eprintln!("{} seed {}: {e}", r.variant, r.seed);
                }
            }
            if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_csv(&rows, fs::File::create(&csv)?)?;
        }
        Command::PlanGlobal { map, start, goal, pref, truth, resolution } => {
            let sc = if map.extension().is_some_and(|e| e == "pgm") {
                Scenario {
                    map: MapSpec::Pgm { pgm_file: map.clone(), resolution_m: resolution, origin_m: [0.0, 0.0] },
                    ..Scenario::from_json(
                        &serde_json::json!({
                            "name": "plan-global",
                            "map": {"width_m": 1, "height_m": 1},
                            "robot": {"start_m": [start.x, start.y], "goal_m": [goal.x, goal.y]}
                        })
                        .to_string(),
                    )?
                }
            } else {
                Scenario::load(&map)?
            };
            let upf = pref.map(|p| UpfParams::new(p, start));
            let (path, _) = plan_global(&sc, start, goal, upf.as_ref())?;
            let truth_pts: Option<Vec<Point2>> = match truth {
                Some(p) => {
                    let raw: Vec<[f64; 2]> = serde_json::from_str(&fs::read_to_string(&p)?)?;
                    Some(raw.into_iter().map(Point2::from).collect())
                }
                None => None,
            };
            let out = serde_json::json!({
                "waypoints": path.waypoints.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
                "length_m": path.total_length,
                "cost": path.total_cost,
                "path_error_m": truth_pts.map(|t| path_error(&path, &t)),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Serve { scenario, port, planner, seed, overrides } => {
            let sc = load_scenario(&scenario, &overrides)?;
            let seed = seed.unwrap_or(sc.seed);
            let dir = scenario.parent().map(Path::to_path_buf).unwrap_or_default();
            let handle =
                serve(sc, ServeOptions { port, variant: planner, seed, scenario_dir: dir, ..Default::default() })?;
            eprintln!("listening on ws://{}", handle.local_addr());
            handle.join();
        }
    }
    Ok(())
}
