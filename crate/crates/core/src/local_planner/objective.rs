use crate::crowd_sim::ControlInput;
use crate::gridworld::{normalize_angle, Point2, Pose2D};

use super::barrier::{barrier_with_gradient, KeepOut};
use super::shared::blend_reference;
use super::{PlanProblem, PlannerConfig, PlannerError};

#[derive(Debug, Clone, Copy, PartialEq)]
enum ConstraintMode {
    /// `h(k+1) - (1 - gamma) h(k) >= 0` for k = 0..N-1.
    Decay { gamma: f64 },
    /// `h(k) >= 0` for k = 1..N.
    Clearance,
}

#[derive(Debug, Clone, PartialEq)]
struct Keep {
    predictions: Vec<Point2>,
    shape: KeepOut,
}

/// A planning problem flattened into the form the solver works on.
/// Controls are stored as `[v0, w0, v1, w1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub x0: Pose2D,
    pub refs: Vec<Pose2D>,
    pub n: usize,
    pub dt: f64,
    q_state: [f64; 3],
    q_input: [f64; 2],
    q_terminal: f64,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    mode: ConstraintMode,
    l_robot: f64,
    margin: f64,
    keeps: Vec<Keep>,
}

impl CostModel {
    pub fn new(problem: &PlanProblem, cfg: &PlannerConfig) -> Result<Self, PlannerError> {
        cfg.validate()?;
        problem.validate(cfg)?;
        let refs = match (&problem.user_refs, cfg.flags.shared) {
            (Some(user), true) => blend_reference(&problem.global_refs, user, problem.eta.clamp(0.0, 1.0))?,
            _ => problem.global_refs.clone(),
        };
        let mode = if cfg.flags.cbf { ConstraintMode::Decay { gamma: cfg.gamma } } else { ConstraintMode::Clearance };
        let plain_circle = !cfg.flags.cbf && !cfg.flags.social_area;
        let l_robot = if plain_circle { 0.0 } else { problem.robot_extent_m };
        let keeps = problem
            .obstacles
            .iter()
            .map(|o| Keep {
                predictions: o.predictions.clone(),
                shape: if cfg.flags.social_area {
                    KeepOut::Social(o.area)
                } else if cfg.flags.cbf {
                    KeepOut::Disc(o.radius_m)
                } else {
                    KeepOut::Disc(cfg.d_safe_m)
                },
            })
            .collect();
        Ok(Self {
            x0: problem.robot.pose,
            refs,
            n: cfg.horizon,
            dt: cfg.dt_s,
            q_state: cfg.q_state,
            q_input: cfg.q_input,
            q_terminal: cfg.q_terminal,
            lower: [cfg.v_min, -cfg.omega_max],
            upper: [cfg.v_max, cfg.omega_max],
            mode,
            l_robot,
            margin: cfg.barrier_margin_m,
            keeps,
        })
    }

    pub fn constraint_count(&self) -> usize {
        self.keeps.len() * self.n
    }

    pub fn project(&self, u: &mut [f64]) {
        for (k, x) in u.iter_mut().enumerate() {
            *x = x.clamp(self.lower[k % 2], self.upper[k % 2]);
        }
    }

    /// States 0..=N; headings are left unwrapped.
    pub fn rollout(&self, u: &[f64]) -> Vec<Pose2D> {
        let mut s = Vec::with_capacity(self.n + 1);
        let mut p = self.x0;
        s.push(p);
        for k in 0..self.n {
            let (v, w) = (u[2 * k], u[2 * k + 1]);
            p = Pose2D {
                x: p.x + v * p.theta.cos() * self.dt,
                y: p.y + v * p.theta.sin() * self.dt,
                theta: p.theta + w * self.dt,
            };
            s.push(p);
        }
        s
    }

    fn state_weight(&self, k: usize) -> f64 {
        if k == self.n {
            self.q_terminal
        } else {
            1.0
        }
    }

    /// Tracking and input cost, optionally accumulating its gradient with
    /// respect to the states and controls.
    fn tracking(&self, states: &[Pose2D], u: &[f64], mut grads: Option<(&mut [[f64; 3]], &mut [f64])>) -> f64 {
        let q = self.q_state;
        let mut f = 0.0;
        for k in 1..=self.n {
            let r = self.refs[k - 1];
            let s = states[k];
            let e = [s.x - r.x, s.y - r.y, normalize_angle(s.theta - r.theta)];
            let w = self.state_weight(k);
            f += w * (q[0] * e[0] * e[0] + q[1] * e[1] * e[1] + q[2] * e[2] * e[2]);
            if let Some((ds, _)) = grads.as_mut() {
                for i in 0..3 {
                    ds[k][i] += 2.0 * w * q[i] * e[i];
                }
            }
        }
        for k in 0..self.n {
            let (v, om) = (u[2 * k], u[2 * k + 1]);
            f += self.q_input[0] * v * v + self.q_input[1] * om * om;
            if let Some((_, du)) = grads.as_mut() {
                du[2 * k] += 2.0 * self.q_input[0] * v;
                du[2 * k + 1] += 2.0 * self.q_input[1] * om;
            }
        }
        f
    }

    fn barrier(&self, keep: &Keep, states: &[Pose2D], k: usize) -> (f64, Point2) {
        barrier_with_gradient(states[k].position(), self.l_robot, keep.predictions[k], &keep.shape)
    }

    /// Barrier value of every pedestrian at the initial state.
    pub fn current_barriers(&self) -> Vec<f64> {
        let s = [self.x0];
        self.keeps.iter().map(|k| self.barrier(k, &s, 0).0).collect()
    }

    /// The first step is held to the bare constraint and later steps are
    /// tightened, so the next solve starts with slack for perception error.
    fn margin_at(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.margin
        }
    }

    /// Constraint values `g >= 0`, ordered by obstacle then step.
    pub fn constraints(&self, states: &[Pose2D]) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.constraint_count());
        for keep in &self.keeps {
            match self.mode {
                ConstraintMode::Decay { gamma } => {
                    let mut h_prev = self.barrier(keep, states, 0).0;
                    for k in 0..self.n {
                        let h = self.barrier(keep, states, k + 1).0;
                        g.push(h - (1.0 - gamma) * h_prev - self.margin_at(k));
                        h_prev = h;
                    }
                }
                ConstraintMode::Clearance => {
                    for k in 1..=self.n {
                        g.push(self.barrier(keep, states, k).0 - self.margin_at(k - 1));
                    }
                }
            }
        }
        g
    }

    /// Adds `sum_i weight_i * d g_i / d state` into `ds`.
    fn constraint_vjp(&self, states: &[Pose2D], weights: &[f64], ds: &mut [[f64; 3]]) {
        let mut idx = 0;
        for keep in &self.keeps {
            match self.mode {
                ConstraintMode::Decay { gamma } => {
                    for k in 0..self.n {
                        let w = weights[idx];
                        idx += 1;
                        if w == 0.0 {
                            continue;
                        }
                        let (_, g1) = self.barrier(keep, states, k + 1);
                        ds[k + 1][0] += w * g1.x;
                        ds[k + 1][1] += w * g1.y;
                        if k > 0 {
                            let (_, g0) = self.barrier(keep, states, k);
                            ds[k][0] -= w * (1.0 - gamma) * g0.x;
                            ds[k][1] -= w * (1.0 - gamma) * g0.y;
                        }
                    }
                }
                ConstraintMode::Clearance => {
                    for k in 1..=self.n {
                        let w = weights[idx];
                        idx += 1;
                        if w != 0.0 {
                            let (_, g1) = self.barrier(keep, states, k);
                            ds[k][0] += w * g1.x;
                            ds[k][1] += w * g1.y;
                        }
                    }
                }
            }
        }
    }

    /// Pulls state gradients back onto the controls through the dynamics.
    fn adjoint(&self, states: &[Pose2D], u: &[f64], ds: &mut [[f64; 3]], du: &mut [f64]) {
        let mut a = ds[self.n];
        for k in (0..self.n).rev() {
            let th = states[k].theta;
            let (s, c) = th.sin_cos();
            let v = u[2 * k];
            du[2 * k] += self.dt * (c * a[0] + s * a[1]);
            du[2 * k + 1] += self.dt * a[2];
            let mut prev = ds[k];
            prev[0] += a[0];
            prev[1] += a[1];
            prev[2] += a[2] + self.dt * v * (-s * a[0] + c * a[1]);
            a = prev;
        }
    }

    pub fn cost(&self, u: &[f64]) -> f64 {
        let states = self.rollout(u);
        self.tracking(&states, u, None)
    }

    pub fn cost_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let states = self.rollout(u);
        let mut ds = vec![[0.0; 3]; self.n + 1];
        let mut du = vec![0.0; 2 * self.n];
        let f = self.tracking(&states, u, Some((&mut ds, &mut du)));
        self.adjoint(&states, u, &mut ds, &mut du);
        (f, du)
    }

    /// Tracking cost plus `penalty` on the constraint values. Infinite when a
    /// log barrier sees a non-positive constraint.
    pub fn merit(&self, u: &[f64], penalty: &Penalty, want_grad: bool) -> (f64, Vec<f64>, Vec<f64>) {
        let states = self.rollout(u);
        let mut ds = vec![[0.0; 3]; self.n + 1];
        let mut du = vec![0.0; 2 * self.n];
        let mut f = if want_grad {
            self.tracking(&states, u, Some((&mut ds, &mut du)))
        } else {
            self.tracking(&states, u, None)
        };
        let g = self.constraints(&states);
        let mut w = vec![0.0; g.len()];
        for i in 0..g.len() {
            let (value, slope, _) = penalty.term(i, g[i]);
            f += value;
            w[i] = slope;
        }
        if want_grad && f.is_finite() {
            self.constraint_vjp(&states, &w, &mut ds);
            self.adjoint(&states, u, &mut ds, &mut du);
        }
        (f, du, g)
    }

    /// Sensitivities of every state (x, y, theta) to every control,
    /// `jac[k][i][j] = d state_k[i] / d u_j`.
    fn state_jacobians(&self, states: &[Pose2D], u: &[f64]) -> Vec<[Vec<f64>; 3]> {
        let m = 2 * self.n;
        let mut jac = Vec::with_capacity(self.n + 1);
        jac.push([vec![0.0; m], vec![0.0; m], vec![0.0; m]]);
        for k in 0..self.n {
            let (s, c) = states[k].theta.sin_cos();
            let v = u[2 * k];
            let prev = &jac[k];
            let mut next = prev.clone();
            for j in 0..2 * k {
                let dth = prev[2][j];
                next[0][j] -= self.dt * v * s * dth;
                next[1][j] += self.dt * v * c * dth;
            }
            next[0][2 * k] += self.dt * c;
            next[1][2 * k] += self.dt * s;
            next[2][2 * k + 1] += self.dt;
            jac.push(next);
        }
        jac
    }

    /// Gauss-Newton approximation of the merit Hessian, row-major.
    pub fn merit_gauss_newton(&self, u: &[f64], penalty: &Penalty) -> Vec<f64> {
        let m = 2 * self.n;
        let states = self.rollout(u);
        let jac = self.state_jacobians(&states, u);
        let mut h = vec![0.0; m * m];
        let outer = |row: &[f64], w: f64, h: &mut [f64]| {
            for (a, &ra) in row.iter().enumerate() {
                if ra == 0.0 {
                    continue;
                }
                let wa = w * ra;
                for (b, &rb) in row.iter().enumerate().skip(a) {
                    h[a * m + b] += wa * rb;
                }
            }
        };
        for k in 1..=self.n {
            let w = self.state_weight(k);
            for i in 0..3 {
                outer(&jac[k][i], 2.0 * w * self.q_state[i], &mut h);
            }
        }
        for j in 0..m {
            h[j * m + j] += 2.0 * self.q_input[j % 2];
        }
        let g = self.constraints(&states);
        let mut idx = 0;
        let mut row = vec![0.0; m];
        let add_pos = |row: &mut [f64], jk: &[Vec<f64>; 3], gp: Point2, scale: f64| {
            for j in 0..m {
                row[j] += scale * (gp.x * jk[0][j] + gp.y * jk[1][j]);
            }
        };
        for keep in &self.keeps {
            for k in 0..self.n {
                let i = idx;
                idx += 1;
                let curvature = penalty.term(i, g[i]).2;
                if curvature <= 0.0 {
                    continue;
                }
                row.iter_mut().for_each(|r| *r = 0.0);
                match self.mode {
                    ConstraintMode::Decay { gamma } => {
                        add_pos(&mut row, &jac[k + 1], self.barrier(keep, &states, k + 1).1, 1.0);
                        if k > 0 {
                            add_pos(&mut row, &jac[k], self.barrier(keep, &states, k).1, -(1.0 - gamma));
                        }
                    }
                    ConstraintMode::Clearance => {
                        add_pos(&mut row, &jac[k + 1], self.barrier(keep, &states, k + 1).1, 1.0);
                    }
                }
                outer(&row, curvature, &mut h);
            }
        }
        for a in 0..m {
            for b in 0..a {
                h[a * m + b] = h[b * m + a];
            }
        }
        h
    }
}

/// How constraint values `g >= 0` enter the merit.
#[derive(Debug, Clone, Copy)]
pub enum Penalty<'a> {
    /// Augmented Lagrangian with multipliers `lambda >= 0` and penalty `rho > 0`.
    Lagrangian { lambda: &'a [f64], rho: f64 },
    /// `-mu * ln g`, defined only where every constraint is strictly met.
    LogBarrier { mu: f64 },
}

impl Penalty<'_> {
    /// Value, derivative and Gauss-Newton curvature for constraint `i`.
    fn term(&self, i: usize, g: f64) -> (f64, f64, f64) {
        match *self {
            Penalty::Lagrangian { lambda, rho } => {
                let t = lambda[i] - rho * g;
                if t > 0.0 {
                    (-lambda[i] * g + 0.5 * rho * g * g, -t, rho)
                } else {
                    (-lambda[i] * lambda[i] / (2.0 * rho), 0.0, 0.0)
                }
            }
            Penalty::LogBarrier { mu } => {
                if g > 0.0 {
                    (-mu * g.ln(), -mu / g, mu / (g * g))
                } else {
                    (f64::INFINITY, 0.0, 0.0)
                }
            }
        }
    }
}

pub fn flatten(u: &[ControlInput]) -> Vec<f64> {
    u.iter().flat_map(|c| [c.v, c.omega]).collect()
}

pub fn unflatten(u: &[f64]) -> Vec<ControlInput> {
    u.chunks_exact(2).map(|c| ControlInput::new(c[0], c[1])).collect()
}

/// States 0..=N under `controls`, headings wrapped.
pub fn rollout(x0: Pose2D, controls: &[ControlInput], dt: f64) -> Vec<Pose2D> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    let mut p = x0;
    out.push(p);
    for u in controls {
        p = Pose2D::new(p.x + u.v * p.theta.cos() * dt, p.y + u.v * p.theta.sin() * dt, p.theta + u.omega * dt);
        out.push(p);
    }
    out
}

pub fn objective_value(model: &CostModel, controls: &[ControlInput]) -> f64 {
    model.cost(&flatten(controls))
}

/// Gradient of the tracking objective with respect to `[v0, w0, v1, ...]`.
pub fn objective_gradient(model: &CostModel, controls: &[ControlInput]) -> Vec<f64> {
    model.cost_and_gradient(&flatten(controls)).1
}

pub fn constraint_values(model: &CostModel, controls: &[ControlInput]) -> Vec<f64> {
    model.constraints(&model.rollout(&flatten(controls)))
}
