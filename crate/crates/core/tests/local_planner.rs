use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use socialnav::crowd_sim::{step_robot, ControlInput, RobotState};
use socialnav::gridworld::{Point2, Pose2D};
use socialnav::local_planner::{
    barrier_value, constraint_values, dcbf_residual, objective_gradient, objective_value, solve, CostModel, KeepOut,
    PlanObstacle, PlanProblem, PlannerConfig, SolveStatus, Variant,
};
use socialnav::perception::SocialArea;

fn straight_refs(n: usize, speed: f64, dt: f64) -> Vec<Pose2D> {
    (1..=n).map(|k| Pose2D::new(speed * dt * k as f64, 0.0, 0.0)).collect()
}

fn problem(refs: Vec<Pose2D>, obstacles: Vec<PlanObstacle>) -> PlanProblem {
    PlanProblem {
        robot: RobotState::new(Pose2D::new(0.0, 0.0, 0.0), 0.6),
        global_refs: refs,
        user_refs: None,
        eta: 0.0,
        obstacles,
        robot_extent_m: 0.6,
        warm_start: None,
    }
}

fn walker(n: usize, dt: f64, p: Point2, v: Point2, c: f64) -> PlanObstacle {
    PlanObstacle {
        id: 1,
        predictions: (0..=n).map(|k| p.add(v.scale(k as f64 * dt))).collect(),
        area: SocialArea::from_velocity(p, v, c),
        radius_m: 0.35,
    }
}

#[test]
fn single_step_matches_grid_oracle() {
    let cfg = PlannerConfig { horizon: 1, ..PlannerConfig::default() };
    let p = problem(straight_refs(1, cfg.v_max, cfg.dt_s), vec![]);
    let sol = solve(&p, &cfg).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    let model = CostModel::new(&p, &cfg).unwrap();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let steps = 1500;
    for i in 0..=steps {
        let v = cfg.v_min + (cfg.v_max - cfg.v_min) * i as f64 / steps as f64;
        for j in 0..=240 {
            let w = -cfg.omega_max + 2.0 * cfg.omega_max * j as f64 / 240.0;
            let c = objective_value(&model, &[ControlInput::new(v, w)]);
            if c < best.0 {
                best = (c, v, w);
            }
        }
    }
    let u = sol.controls[0];
    assert!((u.v - best.1).abs() < 1e-2 && (u.omega - best.2).abs() < 1e-2, "{u:?} vs {best:?}");
    assert!(sol.cost <= best.0 + 1e-9);
}

#[test]
fn fixed_point_on_reference() {
    let cfg = PlannerConfig::default();
    let refs = vec![Pose2D::new(0.0, 0.0, 0.0); cfg.horizon];
    let sol = solve(&problem(refs, vec![]), &cfg).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    for u in &sol.controls {
        assert!(u.v.abs() < 1e-4 && u.omega.abs() < 1e-4);
    }
    for s in &sol.predicted_states {
        assert!(s.position().norm() < 1e-4 && s.theta.abs() < 1e-4);
    }
}

#[test]
fn head_on_residuals_hold_on_independent_rollout() {
    let cfg = PlannerConfig::for_variant(Variant::SsMpcDcbf);
    let n = cfg.horizon;
    let ped = walker(n, cfg.dt_s, Point2::new(6.0, 0.05), Point2::new(-1.2, 0.0), 0.3);
    let p = problem(straight_refs(n, 1.0, cfg.dt_s), vec![ped.clone()]);
    let sol = solve(&p, &cfg).unwrap();
    assert_ne!(sol.status, SolveStatus::Infeasible);
    let shape = KeepOut::Social(ped.area);
    let mut s = p.robot;
    let mut h_prev = barrier_value(s.pose.position(), 0.6, ped.predictions[0], &shape);
    for (k, u) in sol.controls.iter().enumerate() {
        assert!(u.v >= cfg.v_min && u.v <= cfg.v_max && u.omega.abs() <= cfg.omega_max);
        s = step_robot(&s, *u, cfg.dt_s);
        let h = barrier_value(s.pose.position(), 0.6, ped.predictions[k + 1], &shape);
        assert!(dcbf_residual(h, h_prev, cfg.gamma) >= -cfg.tolerance, "step {k}");
        h_prev = h;
    }
}

#[test]
fn variants_coincide_without_pedestrians() {
    let refs: Vec<Pose2D> = (1..=20).map(|k| Pose2D::new(0.1 * k as f64, 0.02 * k as f64, 0.2)).collect();
    let base = solve(&problem(refs.clone(), vec![]), &PlannerConfig::for_variant(Variant::Mpc)).unwrap();
    for v in Variant::ALL {
        let sol = solve(&problem(refs.clone(), vec![]), &PlannerConfig::for_variant(v)).unwrap();
        assert_eq!(sol, base, "{v}");
    }
}

#[test]
fn tighter_decay_admits_fewer_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 4;
    let obstacle = walker(n, 0.1, Point2::new(1.7, 0.0), Point2::new(-0.5, 0.0), 0.3);
    let mut both = 0;
    let mut only_loose = 0;
    for _ in 0..400 {
        let u: Vec<ControlInput> =
            (0..n).map(|_| ControlInput::new(rng.random_range(-0.3..1.2), rng.random_range(-1.2..1.2))).collect();
        let feasible = |gamma: f64| {
            let cfg = PlannerConfig { horizon: n, gamma, ..PlannerConfig::for_variant(Variant::SsMpcDcbf) };
            let p = problem(straight_refs(n, 1.0, 0.1), vec![obstacle.clone()]);
            let m = CostModel::new(&p, &cfg).unwrap();
            constraint_values(&m, &u).iter().all(|&g| g >= 0.0)
        };
        let tight = feasible(0.3);
        let loose = feasible(0.7);
        assert!(!tight || loose);
        both += (tight && loose) as usize;
        only_loose += (!tight && loose) as usize;
    }
    assert!(both > 0 && only_loose > 0, "{both} {only_loose}");
}

#[test]
fn analytic_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let cfg = PlannerConfig::default();
        let n = cfg.horizon;
        let refs: Vec<Pose2D> = (1..=n)
            .map(|k| {
                Pose2D::new(
                    0.1 * k as f64 + rng.random_range(-0.2..0.2),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        let p = problem(refs, vec![]);
        let m = CostModel::new(&p, &cfg).unwrap();
        let u: Vec<ControlInput> =
            (0..n).map(|_| ControlInput::new(rng.random_range(-0.3..1.2), rng.random_range(-1.2..1.2))).collect();
        let g = objective_gradient(&m, &u);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..2 * n {
            let e = 1e-6;
            let bump = |d: f64| {
                let mut w = u.clone();
                if i % 2 == 0 {
                    w[i / 2].v += d;
                } else {
                    w[i / 2].omega += d;
                }
                objective_value(&m, &w)
            };
            let fd = (bump(e) - bump(-e)) / (2.0 * e);
            num += (fd - g[i]).powi(2);
            den += fd * fd;
        }
        assert!((num / den).sqrt() < 1e-4);
    }
}

#[test]
fn five_pedestrian_solves_are_fast() {
    let cfg = PlannerConfig::for_variant(Variant::SsMpcDcbf);
    let n = cfg.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut times = Vec::new();
    let mut statuses = Vec::new();
    for _ in 0..30 {
        let peds = (0..5)
            .map(|i| {
                let p = Point2::new(rng.random_range(3.0..8.0), rng.random_range(-4.0..4.0));
                let v = Point2::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
                PlanObstacle { id: i, ..walker(n, cfg.dt_s, p, v, 0.3) }
            })
            .collect();
        let p = problem(straight_refs(n, 1.0, cfg.dt_s), peds);
        let t = std::time::Instant::now();
        let sol = solve(&p, &cfg).unwrap();
        times.push(t.elapsed().as_secs_f64());
        statuses.push(sol.status);
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    eprintln!("median {median:.4}s statuses {statuses:?}");
    assert!(median < 0.05);
}
