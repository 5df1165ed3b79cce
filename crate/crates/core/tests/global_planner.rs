mod common;

use std::time::Instant;

use proptest::prelude::*;
use rand::RngExt;

use socialnav::costmap::{build_upf_layer, sigma_from_distance, upf_costs, Costmap, UpfMode, UpfParams, LETHAL};
use socialnav::global_planner::{path_cost, path_error, plan_astar, AstarWeights, GlobalPath, PlanError};
use socialnav::gridworld::{Cell, OccupancyGrid, Point2};
use socialnav::harness::plan_global;

#[test]
fn astar_matches_dijkstra_on_random_maps() {
    let mut rng = common::rng(7);
    let weights = AstarWeights::default();
    let mut solved = 0;
    for _ in 0..100 {
        let mut cm = common::random_costmap(&mut rng, 30, 30);
        let start = Cell::new(rng.random_range(0..30), rng.random_range(0..30));
        let goal = Cell::new(rng.random_range(0..30), rng.random_range(0..30));
        cm.set(start, 0);
        cm.set(goal, 0);
        let oracle = common::dijkstra_cost(&cm, start, goal);
        match plan_astar(&cm, start, goal, &weights) {
            Ok(p) => {
                let d = oracle.expect("oracle finds the path A* found");
                assert_eq!(p.total_cost, d, "{start} -> {goal}");
                assert_eq!(path_cost(&cm, &p.cells, &weights), p.total_cost);
                assert_eq!(p.cells.first(), Some(&start));
                assert_eq!(p.cells.last(), Some(&goal));
                assert!(p.cells.iter().all(|&c| cm.get(c) < LETHAL));
                solved += 1;
            }
            Err(PlanError::NoPath { .. }) => assert_eq!(oracle, None),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(solved > 50, "too few reachable pairs: {solved}");
}

#[test]
fn upf_pulls_every_office_layout_toward_the_user_route() {
    let layouts = common::upf_layouts();
    assert_eq!(layouts.len(), 10);
    let started = Instant::now();
    let mut ratios = Vec::new();
    for sc in &layouts {
        let start = Point2::from(sc.robot.start_m);
        let goal = Point2::from(sc.robot.goal_m);
        let truth = sc.ground_truth().expect("layout has a user route");
        let (plain, _) = plan_global(sc, start, goal, None).unwrap();
        let (upf, _) = plan_global(sc, start, goal, sc.upf_params().as_ref()).unwrap();
        let (e_plain, e_upf) = (path_error(&plain, &truth), path_error(&upf, &truth));
        assert!(e_upf < e_plain, "{}: {e_upf} vs {e_plain}", sc.name);
        ratios.push(e_upf / e_plain);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(mean <= 0.5, "mean ratio {mean}");
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn sigma_at_unit_distance() {
    assert!((sigma_from_distance(1.0).unwrap() - 0.465).abs() <= 0.002);
}

#[test]
fn full_map_upf_scan_is_fast() {
    let grid = OccupancyGrid::new_empty(100, 100, 0.05, Point2::default()).unwrap();
    let base = Costmap::static_layer(&grid);
    let params = UpfParams::new(Point2::new(2.5, 2.5), Point2::new(0.5, 0.5));
    let t = Instant::now();
    let out = build_upf_layer(&params, &base).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1.0);
    assert_eq!(out.len(), 10_000);
}

#[test]
fn path_error_vanishes_on_the_route_itself() {
    let route = vec![Point2::new(0.0, 0.0), Point2::new(3.0, 0.0), Point2::new(3.0, 4.0)];
    assert_eq!(path_error(&GlobalPath::from_polyline(route.clone()), &route), 0.0);
    let shifted = GlobalPath::from_polyline(vec![Point2::new(0.0, 1.0), Point2::new(2.0, 1.0)]);
    assert!((path_error(&shifted, &[Point2::new(-5.0, 0.0), Point2::new(5.0, 0.0)]) - 1.0).abs() < 1e-12);
}

fn base_map(seed: u64) -> Costmap {
    let mut rng = common::rng(seed);
    common::random_costmap(&mut rng, 40, 30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn upf_layer_keeps_lethal_cells_and_takes_the_max(
        seed in 0u64..1000,
        px in 0.05f64..3.95, py in 0.05f64..2.95,
        rx in 0.05f64..3.95, ry in 0.05f64..2.95,
        literal in any::<bool>(),
    ) {
        let base = base_map(seed);
        let pref = Point2::new(px, py);
        let robot = Point2::new(rx, ry);
        prop_assume!(pref.dist(robot) > 0.05);
        let mode = if literal { UpfMode::Literal } else { UpfMode::Disk };
        let params = UpfParams { mode, ..UpfParams::new(pref, robot) };
        let raw = upf_costs(&params, &base).unwrap();
        let out = build_upf_layer(&params, &base).unwrap();
        for (k, &r) in raw.iter().enumerate() {
            let (b, o) = (base.costs()[k], out.costs()[k]);
            prop_assert_eq!(o, b.max(r));
            prop_assert!(r < LETHAL);
            prop_assert_eq!(b == LETHAL, o == LETHAL);
        }
    }

    #[test]
    fn raising_the_base_never_lowers_the_result(seed in 0u64..1000, bump in 1u8..100) {
        let base = base_map(seed);
        let params = UpfParams::new(Point2::new(1.0, 1.0), Point2::new(3.0, 2.0));
        let mut raised = base.clone();
        for k in 0..raised.len() {
            let c = raised.cell_of_index(k);
            let v = raised.get(c);
            if v < LETHAL {
                raised.set(c, v.saturating_add(bump).min(LETHAL - 1));
            }
        }
        let lo = build_upf_layer(&params, &base).unwrap();
        let hi = build_upf_layer(&params, &raised).unwrap();
        for k in 0..lo.len() {
            prop_assert!(hi.costs()[k] >= lo.costs()[k]);
        }
    }

    #[test]
    fn path_error_is_non_negative(xs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..10)) {
        let pts: Vec<Point2> = xs.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        let truth = [Point2::new(-1.0, 0.0), Point2::new(1.0, 2.0)];
        prop_assert!(path_error(&GlobalPath::from_polyline(pts), &truth) >= 0.0);
    }
}
