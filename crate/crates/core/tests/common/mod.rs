#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use socialnav::costmap::{Costmap, LETHAL};
use socialnav::gridworld::{Cell, OccupancyGrid, Point2};
use socialnav::harness::Scenario;

pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn upf_layouts() -> Vec<Scenario> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenario_dir().join("upf-office"))
        .expect("layout directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files.iter().map(|p| Scenario::load(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).collect()
}

/// Random costmap: about a fifth of the cells lethal, the rest uniform in [0, 253].
pub fn random_costmap(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Costmap {
    let grid = OccupancyGrid::new_empty(w, h, 0.1, Point2::default()).unwrap();
    let mut cm = Costmap::zeros_like(&grid);
    for j in 0..h {
        for i in 0..w {
            let c = if rng.random_range(0.0..1.0) < 0.2 { LETHAL } else { rng.random_range(0..=253u8) };
            cm.set(Cell::new(i, j), c);
        }
    }
    cm
}

/// Plain Dijkstra over the 8-connected grid with edge weight
/// `step * (1 + 10 * cost / 254)`; `None` when the goal is unreachable.
pub fn dijkstra_cost(cm: &Costmap, start: Cell, goal: Cell) -> Option<f64> {
    let (w, h) = (cm.width(), cm.height());
    let res = cm.resolution();
    let idx = |i: usize, j: usize| j * w + i;
    let mut dist = vec![f64::INFINITY; w * h];
    let mut heap = BinaryHeap::new();
    dist[idx(start.i, start.j)] = 0.0;
    // Non-negative floats order like their bit patterns.
    heap.push(Reverse((0f64.to_bits(), start.i, start.j)));
    while let Some(Reverse((bits, i, j))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[idx(i, j)] {
            continue;
        }
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 || ni >= w as i64 || nj >= h as i64 {
                    continue;
                }
                let (ni, nj) = (ni as usize, nj as usize);
                let c = cm.get(Cell::new(ni, nj));
                if c >= LETHAL {
                    continue;
                }
                let step = if di != 0 && dj != 0 { std::f64::consts::SQRT_2 * res } else { res };
                let nd = d + step * (1.0 + 10.0 * f64::from(c) / 254.0);
                if nd < dist[idx(ni, nj)] {
                    dist[idx(ni, nj)] = nd;
                    heap.push(Reverse((nd.to_bits(), ni, nj)));
                }
            }
        }
    }
    let d = dist[idx(goal.i, goal.j)];
    d.is_finite().then_some(d)
}

/// Density clustering by definition: core points have at least `min_pts`
/// points (themselves included) within `eps`; clusters are the connected
/// components of core points, numbered by their smallest member index; a
/// border point takes the smallest cluster among its core neighbours.
pub fn brute_force_clusters(points: &[Point2], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |a: usize, b: usize| points[a].dist(points[b]) <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if core[b] && comp[b] == usize::MAX && near(a, b) {
                    comp[b] = next;
                    stack.push(b);
                }
            }
        }
        next += 1;
    }
    (0..n)
        .map(|i| if core[i] { Some(comp[i]) } else { (0..n).filter(|&j| core[j] && near(i, j)).map(|j| comp[j]).min() })
        .collect()
}

/// A few blobs plus scattered noise.
pub fn random_point_cloud(rng: &mut ChaCha8Rng) -> Vec<Point2> {
    let mut pts = Vec::new();
    for _ in 0..rng.random_range(0..5) {
        let c = Point2::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0));
        for _ in 0..rng.random_range(1..12) {
            pts.push(Point2::new(c.x + rng.random_range(-0.4..0.4), c.y + rng.random_range(-0.4..0.4)));
        }
    }
    for _ in 0..rng.random_range(0..15) {
        pts.push(Point2::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0)));
    }
    pts
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
