use nalgebra::{DMatrix, DVector};

use crate::gridworld::{normalize_angle, Pose2D};

use super::objective::{flatten, unflatten, CostModel, Penalty};
use super::{PlanProblem, PlanSolution, PlannerConfig, PlannerError, SolveStatus};

const RHO_INIT: f64 = 1000.0;
const RHO_MAX: f64 = 1e7;
const ARMIJO: f64 = 1e-4;
const MU_INIT: f64 = 1e-3;
const MU_MIN: f64 = 1e-9;
const MU_MAX: f64 = 1e10;
const SWITCH_MARGIN: f64 = 0.2;
const MAX_MOVE: f64 = 0.5;
const BARRIER_MU_INIT: f64 = 1.0;
const BARRIER_MU_MIN: f64 = 1e-5;

#[derive(Debug, Clone)]
struct Attempt {
    u: Vec<f64>,
    cost: f64,
    violation: f64,
    status: SolveStatus,
    iterations: usize,
}

/// Minimizes the tracking objective subject to the variant's pedestrian
/// constraints and the input box.
///
/// Augmented-Lagrangian rounds wrap a projected Gauss-Newton inner
/// solver. The warm start (or a reference-following seed) is solved first,
/// and a log-barrier path from the same start is preferred when that start
/// is strictly feasible. When pedestrians constrain the problem, swerving
/// seeds are also tried, plus stopping and reversing seeds if nothing
/// feasible was found, and the best result is kept.
pub fn solve(problem: &PlanProblem, cfg: &PlannerConfig) -> Result<PlanSolution, PlannerError> {
    let model = CostModel::new(problem, cfg)?;
    let first = match &problem.warm_start {
        Some(w) if w.len() == cfg.horizon => flatten(w),
        _ => reference_seed(&model),
    };
    let warm = problem.warm_start.is_some();
    let mut iterations = 0;
    let mut best = augmented_lagrangian(&model, cfg, first.clone());
    iterations += best.iterations;
    if model.constraint_count() > 0 {
        if let Some(ip) = interior_point(&model, cfg, first) {
            iterations += ip.iterations;
            // The feasible path from the incumbent plan is the default; the
            // unconstrained-start result must beat it by the switch margin.
            if !better(&best, &ip) {
                best = ip;
            }
        }
    }
    if model.constraint_count() > 0 {
        let mut seeds = fallback_seeds(&model, cfg);
        if warm {
            seeds.insert(0, reference_seed(&model));
        }
        if best.status != SolveStatus::Infeasible {
            // Only the swerves can reveal a cheaper way around a pedestrian.
            seeds.truncate(if warm { 5 } else { 4 });
        }
        for seed in seeds {
            let a = augmented_lagrangian(&model, cfg, seed.clone());
            iterations += a.iterations;
            if better(&a, &best) {
                best = a;
            }
        }
        if best.status == SolveStatus::Infeasible {
            for seed in fallback_seeds(&model, cfg) {
                if let Some(a) = interior_point(&model, cfg, seed) {
                    iterations += a.iterations;
                    if better(&a, &best) {
                        best = a;
                    }
                }
            }
        }
    }
    let states = model.rollout(&best.u).into_iter().map(|p| Pose2D::new(p.x, p.y, p.theta)).collect();
    Ok(PlanSolution {
        controls: unflatten(&best.u),
        predicted_states: states,
        cost: best.cost,
        max_constraint_violation: best.violation,
        status: best.status,
        iterations,
    })
}

fn rank(s: SolveStatus) -> u8 {
    match s {
        SolveStatus::Optimal => 0,
        SolveStatus::MaxIter => 1,
        SolveStatus::Infeasible => 2,
    }
}

fn better(a: &Attempt, b: &Attempt) -> bool {
    let feasible = |x: &Attempt| x.status != SolveStatus::Infeasible;
    match (feasible(a), feasible(b)) {
        (true, false) => true,
        (false, true) => false,
        // Switching away from the incumbent needs a clear gain, which keeps
        // the robot committed to one side of a pedestrian.
        (true, true) => match rank(a.status).cmp(&rank(b.status)) {
            std::cmp::Ordering::Less => a.cost < b.cost * (1.0 + SWITCH_MARGIN),
            std::cmp::Ordering::Equal => a.cost < b.cost * (1.0 - SWITCH_MARGIN),
            std::cmp::Ordering::Greater => a.cost < b.cost * (1.0 - 2.0 * SWITCH_MARGIN),
        },
        (false, false) => a.violation < b.violation,
    }
}

/// Controls that reproduce the reference spacing and turning.
fn reference_seed(m: &CostModel) -> Vec<f64> {
    let mut u = Vec::with_capacity(2 * m.n);
    let mut prev = m.x0;
    for r in &m.refs {
        let (s, c) = prev.theta.sin_cos();
        let v = ((r.x - prev.x) * c + (r.y - prev.y) * s) / m.dt;
        let w = normalize_angle(r.theta - prev.theta) / m.dt;
        u.push(v);
        u.push(w);
        prev = *r;
    }
    m.project(&mut u);
    u
}

fn fallback_seeds(m: &CostModel, cfg: &PlannerConfig) -> Vec<Vec<f64>> {
    let n = m.n;
    let v = cfg.cruise_speed.clamp(cfg.v_min.max(0.0), cfg.v_max);
    let mut seeds = Vec::new();
    for frac in [0.5, -0.5, 1.0, -1.0] {
        let w = frac * cfg.omega_max;
        let mut u = Vec::with_capacity(2 * n);
        for k in 0..n {
            u.push(v);
            u.push(if k < n / 2 { w } else { -w });
        }
        seeds.push(u);
    }
    // Turn away, then hold the new heading.
    let turn = ((std::f64::consts::FRAC_PI_3 / (cfg.omega_max * m.dt)).round() as usize).clamp(1, n);
    for sign in [1.0, -1.0] {
        let mut u = Vec::with_capacity(2 * n);
        for k in 0..n {
            u.push(cfg.v_max);
            u.push(if k < turn { sign * cfg.omega_max } else { 0.0 });
        }
        seeds.push(u);
    }
    seeds.push(vec![0.0; 2 * n]);
    let mut back = vec![0.0; 2 * n];
    for k in 0..n {
        back[2 * k] = cfg.v_min;
    }
    seeds.push(back);
    for s in &mut seeds {
        m.project(s);
    }
    seeds
}

fn violation(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |acc: f64, &x| acc.max(-x))
}

fn augmented_lagrangian(m: &CostModel, cfg: &PlannerConfig, mut u: Vec<f64>) -> Attempt {
    m.project(&mut u);
    let nc = m.constraint_count();
    let mut lambda = vec![0.0; nc];
    let mut rho = RHO_INIT;
    let mut iterations = 0;
    let mut prev_violation = f64::INFINITY;
    let mut last = (f64::INFINITY, f64::INFINITY);
    for _ in 0..cfg.max_penalty_rounds {
        let pen = Penalty::Lagrangian { lambda: &lambda, rho };
        let (un, it, pg) = projected_newton(m, &pen, u, cfg.max_iterations, cfg.stationarity_tol);
        u = un;
        iterations += it;
        let g = m.constraints(&m.rollout(&u));
        let viol = violation(&g);
        last = (viol, pg);
        if viol <= cfg.tolerance && pg <= cfg.stationarity_tol {
            break;
        }
        if nc == 0 {
            continue;
        }
        for (l, gi) in lambda.iter_mut().zip(&g) {
            *l = (*l - rho * gi).max(0.0);
        }
        if viol > 0.25 * prev_violation {
            rho = (rho * 10.0).min(RHO_MAX);
        }
        prev_violation = viol;
    }
    let (viol, pg) = last;
    let status = if viol > cfg.tolerance {
        SolveStatus::Infeasible
    } else if pg <= cfg.stationarity_tol {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIter
    };
    Attempt { cost: m.cost(&u), u, violation: viol, status, iterations }
}

/// Log-barrier path from a strictly feasible start; every iterate stays
/// strictly feasible, so the robot keeps the side of each pedestrian it is
/// already committed to.
fn interior_point(m: &CostModel, cfg: &PlannerConfig, mut u: Vec<f64>) -> Option<Attempt> {
    m.project(&mut u);
    if m.constraints(&m.rollout(&u)).iter().any(|&g| g <= 0.0) {
        return None;
    }
    let mut mu = BARRIER_MU_INIT;
    let mut iterations = 0;
    let mut pg = f64::INFINITY;
    for _ in 0..cfg.max_penalty_rounds {
        let (un, it, p) = projected_newton(m, &Penalty::LogBarrier { mu }, u, cfg.max_iterations, cfg.stationarity_tol);
        u = un;
        iterations += it;
        pg = p;
        if mu <= BARRIER_MU_MIN {
            break;
        }
        mu = (mu * 0.1).max(BARRIER_MU_MIN);
    }
    let status =
        if pg <= cfg.stationarity_tol && mu <= BARRIER_MU_MIN { SolveStatus::Optimal } else { SolveStatus::MaxIter };
    Some(Attempt { cost: m.cost(&u), violation: violation(&m.constraints(&m.rollout(&u))), u, status, iterations })
}

fn projected_step(m: &CostModel, u: &[f64], g: &[f64], alpha: f64) -> Vec<f64> {
    let mut x: Vec<f64> = u.iter().zip(g).map(|(a, b)| a - alpha * b).collect();
    m.project(&mut x);
    x
}

fn pg_norm(m: &CostModel, u: &[f64], g: &[f64]) -> f64 {
    projected_step(m, u, g, 1.0).iter().zip(u).fold(0.0, |acc: f64, (p, x)| acc.max((p - x).abs()))
}

/// Projected Levenberg-Marquardt on the control box: Gauss-Newton steps
/// over the variables not held at a bound, damped until the merit drops.
/// Returns the final iterate, the iterations used and the final
/// projected-gradient norm.
fn projected_newton(
    m: &CostModel,
    penalty: &Penalty,
    mut u: Vec<f64>,
    budget: usize,
    tol: f64,
) -> (Vec<f64>, usize, f64) {
    let dim = u.len();
    let (mut fx, mut gx, _) = m.merit(&u, penalty, true);
    let mut pg = pg_norm(m, &u, &gx);
    let mut mu = MU_INIT;
    let mut it = 0;
    while it < budget && pg > tol {
        it += 1;
        let h = m.merit_gauss_newton(&u, penalty);
        let free: Vec<usize> = (0..dim)
            .filter(|&i| {
                let (lo, hi) = (m.lower[i % 2], m.upper[i % 2]);
                !((u[i] <= lo && gx[i] > 0.0) || (u[i] >= hi && gx[i] < 0.0))
            })
            .collect();
        let mut accepted = None;
        while mu <= MU_MAX {
            let d = damped_step(&h, &gx, &free, dim, mu);
            let mut cand: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + b).collect();
            m.project(&mut cand);
            let slope: f64 = cand.iter().zip(&u).zip(&gx).map(|((c, a), g)| (c - a) * g).sum();
            let fc = m.merit(&cand, penalty, false).0;
            if slope < 0.0 && fc <= fx + ARMIJO * slope {
                accepted = Some(cand);
                mu = (mu / 3.0).max(MU_MIN);
                break;
            }
            mu *= 4.0;
        }
        let Some(un) = accepted else { break };
        u = un;
        let (f, g, _) = m.merit(&u, penalty, true);
        fx = f;
        gx = g;
        pg = pg_norm(m, &u, &gx);
    }
    (u, it, pg)
}

/// Solves `(H + mu I) d = -g` on the free variables; bounded in size so one
/// step cannot carry the plan to the far side of a pedestrian.
fn damped_step(h: &[f64], g: &[f64], free: &[usize], dim: usize, mu: f64) -> Vec<f64> {
    let nf = free.len();
    let mut d = vec![0.0; dim];
    if nf == 0 {
        return d;
    }
    let a = DMatrix::from_fn(nf, nf, |r, c| h[free[r] * dim + free[c]] + if r == c { mu } else { 0.0 });
    let b = DVector::from_fn(nf, |r, _| -g[free[r]]);
    let sol = match a.cholesky() {
        Some(ch) => ch.solve(&b),
        None => b / mu,
    };
    let dmax = sol.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()));
    let scale = if dmax > MAX_MOVE { MAX_MOVE / dmax } else { 1.0 };
    for (r, &i) in free.iter().enumerate() {
        d[i] = sol[r] * scale;
    }
    d
}
