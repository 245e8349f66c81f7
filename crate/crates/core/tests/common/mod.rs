//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tlsafe::automaton::{Fsa, StateId};
use tlsafe::env::{reset, wrap_angle, EnvConfig, WorldState};
use tlsafe::harness::{Controller, Decision, HarnessError, RunConfig, Task};
use tlsafe::logic::{Bindings, Formula, Predicate};
use tlsafe::qpsolver::QpProblem;
use tlsafe::shield::select_goal;

pub const PHI_RUN: &str = "(F a | F b) & F c & ((!a & !b) U c)";

/// `a`, `b`, `c` read the sign of one coordinate each of a 3-d state.
pub fn abc_bindings() -> Bindings {
    let mut b = Bindings::new();
    for (i, name) in ["a", "b", "c"].iter().enumerate() {
        let mut normal = vec![0.0; 3];
        normal[i] = 1.0;
        b.insert(name.to_string(), Predicate::linear(*name, normal, 0.0).unwrap());
    }
    b
}

pub fn random_abc_trajectory(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=max_len);
    (0..n)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Walks between goal neighbourhoods and random channel points so that
/// accepting and rejecting runs of the channel task are both common.
pub fn random_task_trajectory(rng: &mut ChaCha8Rng, ws: &WorldState, max_len: usize) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=max_len);
    (0..n)
        .map(|_| {
            let k = rng.random_range(0..5);
            if k < 3 {
                let g = ws.goals[k];
                vec![g[0] + 0.3 * normal(rng), g[1] + 0.3 * normal(rng)]
            } else {
                let along: f64 = rng.random_range(-2.5..2.0);
                let lateral: f64 = rng.random_range(-1.2..1.2);
                let r = std::f64::consts::FRAC_1_SQRT_2;
                vec![r * (along - lateral), r * (along + lateral)]
            }
        })
        .collect()
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Quantitative semantics written directly from the definition:
/// `ρ(φ U ψ, t) = max_{t' ≥ t} min(ρ(ψ, t'), min_{t ≤ t'' < t'} ρ(φ, t''))`.
pub fn robustness_oracle(f: &Formula, traj: &[Vec<f64>], t: usize) -> f64 {
    match f {
        Formula::True => f64::INFINITY,
        Formula::False => f64::NEG_INFINITY,
        Formula::Atom(p) => p.value(&traj[t]).unwrap(),
        Formula::Not(a) => -robustness_oracle(a, traj, t),
        Formula::And(a, b) => robustness_oracle(a, traj, t).min(robustness_oracle(b, traj, t)),
        Formula::Or(a, b) => robustness_oracle(a, traj, t).max(robustness_oracle(b, traj, t)),
        Formula::Implies(a, b) => (-robustness_oracle(a, traj, t)).max(robustness_oracle(b, traj, t)),
        Formula::Eventually(a) => (t..traj.len())
            .map(|k| robustness_oracle(a, traj, k))
            .fold(f64::NEG_INFINITY, f64::max),
        Formula::Until(a, b) => (t..traj.len())
            .map(|k| {
                let before = (t..k).map(|j| robustness_oracle(a, traj, j)).fold(f64::INFINITY, f64::min);
                robustness_oracle(b, traj, k).min(before)
            })
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Boolean satisfaction with an atom true iff its value is positive.
pub fn satisfies(f: &Formula, traj: &[Vec<f64>], t: usize) -> bool {
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(p) => p.value(&traj[t]).unwrap() > 0.0,
        Formula::Not(a) => !satisfies(a, traj, t),
        Formula::And(a, b) => satisfies(a, traj, t) && satisfies(b, traj, t),
        Formula::Or(a, b) => satisfies(a, traj, t) || satisfies(b, traj, t),
        Formula::Implies(a, b) => !satisfies(a, traj, t) || satisfies(b, traj, t),
        Formula::Eventually(a) => (t..traj.len()).any(|k| satisfies(a, traj, k)),
        Formula::Until(a, b) => {
            (t..traj.len()).any(|k| satisfies(b, traj, k) && (t..k).all(|j| satisfies(a, traj, j)))
        }
    }
}

/// Truth of a temporal-free formula under an assignment to named atoms.
pub fn eval_prop(f: &Formula, value: &dyn Fn(&str) -> bool) -> bool {
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(p) => value(p.name()),
        Formula::Not(a) => !eval_prop(a, value),
        Formula::And(a, b) => eval_prop(a, value) && eval_prop(b, value),
        Formula::Or(a, b) => eval_prop(a, value) || eval_prop(b, value),
        Formula::Implies(a, b) => !eval_prop(a, value) || eval_prop(b, value),
        Formula::Eventually(_) | Formula::Until(..) => panic!("temporal operator in a guard"),
    }
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-8)
}

/// A random strictly convex QP that is feasible by construction. Some rows
/// are duplicated, some are plain bounds and some are tight at the
/// witness point, so degenerate active sets are common.
pub fn random_feasible_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(1..=5);
    let m = rng.random_range(0..=10);
    let b = DMatrix::from_fn(n, n, |_, _| normal(rng));
    let hessian = b.transpose() * &b + DMatrix::identity(n, n) * 0.1;
    let linear = DVector::from_fn(n, |_, _| 3.0 * normal(rng));
    let witness = DVector::from_fn(n, |_, _| normal(rng));
    let mut g = DMatrix::zeros(m, n);
    for i in 0..m {
        let kind = rng.random_range(0..10);
        if kind == 0 && i > 0 {
            let j = rng.random_range(0..i);
            let row = g.row(j).clone_owned();
            g.set_row(i, &row);
        } else if kind == 1 {
            g[(i, rng.random_range(0..n))] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        } else {
            for k in 0..n {
                g[(i, k)] = normal(rng);
            }
        }
    }
    let bounds = DVector::from_fn(m, |i, _| {
        let slack = if rng.random_bool(0.3) { 0.0 } else { normal(rng).abs() };
        g.row(i).dot(&witness.transpose()) + slack
    });
    QpProblem::new(hessian, linear, g, bounds).unwrap()
}

/// A QP whose rows ask for `u·x ≤ -1` and `u·x ≥ 1` at once.
pub fn random_infeasible_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let mut p = random_feasible_qp(rng);
    let n = p.dim();
    let u = DVector::from_fn(n, |_, _| normal(rng));
    let m = p.num_rows();
    let mut g = p.constraints.clone().resize_vertically(m + 2, 0.0);
    g.set_row(m, &u.transpose());
    g.set_row(m + 1, &(-&u).transpose());
    let mut d = p.bounds.clone().resize_vertically(m + 2, 0.0);
    d[m] = -1.0;
    d[m + 1] = -1.0;
    p.constraints = g;
    p.bounds = d;
    p
}

/// Dual projected-gradient oracle: accelerated ascent on
/// `q(λ) = -½(c + Gᵀλ)ᵀH⁻¹(c + Gᵀλ) - dᵀλ` over `λ ≥ 0` with adaptive
/// restart. Returns the primal point `-H⁻¹(c + Gᵀλ)`.
pub fn dual_projected_gradient(p: &QpProblem, max_iter: usize) -> DVector<f64> {
    let h_inv = p.hessian.clone().try_inverse().expect("positive definite Hessian");
    let primal = |lam: &DVector<f64>| -(&h_inv * (&p.linear + p.constraints.transpose() * lam));
    let m = p.num_rows();
    if m == 0 {
        return primal(&DVector::zeros(0));
    }
    let dual_h = &p.constraints * &h_inv * p.constraints.transpose();
    let lipschitz = dual_h.symmetric_eigenvalues().max().max(1e-12);
    let dual = |lam: &DVector<f64>| {
        let x = primal(lam);
        -0.5 * x.dot(&(&p.hessian * &x)) - p.bounds.dot(lam)
    };
    let mut lam = DVector::zeros(m);
    let mut y = lam.clone();
    let mut t = 1.0f64;
    let mut last = dual(&lam);
    let mut restarted = false;
    for _ in 0..max_iter {
        let grad = &p.constraints * primal(&y) - &p.bounds;
        let next = (&y + grad / lipschitz).map(|v| v.max(0.0));
        let value = dual(&next);
        if value < last {
            if restarted {
                // no ascent even from the last iterate: converged to rounding
                break;
            }
            y = lam.clone();
            t = 1.0;
            restarted = true;
            continue;
        }
        restarted = false;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &lam) * ((t - 1.0) / t_next);
        let step = (&next - &lam).amax();
        lam = next;
        last = value;
        t = t_next;
        if step < 1e-15 * (1.0 + lam.amax()) {
            break;
        }
    }
    primal(&lam)
}

/// Worlds the channel task can be completed in without leaving the
/// channel: every goal sits well inside it, goals are apart, and the
/// straight line to the nearer first goal stays clear of the third.
pub fn reachable_seeds(env: &EnvConfig, range: std::ops::Range<u64>, count: usize) -> Vec<u64> {
    let half = env.channel_half_width * std::f64::consts::FRAC_1_SQRT_2;
    range
        .filter(|&s| {
            let ws = reset(s, env);
            let inside = ws.goals.iter().all(|g| lateral(*g).abs() <= half - env.goal_radius);
            let apart = (0..3).all(|i| (i + 1..3).all(|j| dist(ws.goals[i], ws.goals[j]) > 2.0 * env.goal_radius));
            let p = ws.position(env);
            let first = if dist(p, ws.goals[0]) <= dist(p, ws.goals[1]) { 0 } else { 1 };
            inside && apart && segment_distance(p, ws.goals[first], ws.goals[2]) > 1.5 * env.goal_radius
        })
        .take(count)
        .collect()
}

/// Signed distance across the channel.
pub fn lateral(p: [f64; 2]) -> f64 {
    (p[1] - p[0]) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn segment_distance(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let u = if len2 > 0.0 {
        (((c[0] - a[0]) * d[0] + (c[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist([a[0] + u * d[0], a[1] + u * d[1]], c)
}

/// Goal the Lyapunov function steers toward at the start of the episode.
pub fn initial_goal(task: &Task, env: &EnvConfig, seed: u64) -> Option<[f64; 2]> {
    let ws = reset(seed, env);
    let (fsa, _) = task.instantiate(&ws, env).ok()?;
    let p = ws.position(env);
    let q = fsa.step(fsa.initial(), &p).ok()?;
    if fsa.is_final(q) || fsa.is_trap(q) {
        return None;
    }
    let g = select_goal(&fsa, q, &p).ok()?;
    Some([g.point[0], g.point[1]])
}

/// Worlds whose first goal lies outside the channel.
pub fn stuck_seeds(cfg: &RunConfig, range: std::ops::Range<u64>, count: usize) -> Vec<u64> {
    let task = Task::new(&cfg.task, &cfg.env).unwrap();
    let half = cfg.env.channel_half_width * std::f64::consts::FRAC_1_SQRT_2;
    range
        .filter(|&s| initial_goal(&task, &cfg.env, s).is_some_and(|g| lateral(g).abs() > half + cfg.env.goal_radius))
        .take(count)
        .collect()
}

/// Random actions interleaved with deliberate attacks: full speed toward a
/// channel wall or toward the goal that must not be entered first.
pub struct AdversarialPolicy {
    pub env: EnvConfig,
    pub max_action: [f64; 2],
    rng: ChaCha8Rng,
    mode: usize,
    left: usize,
}

impl AdversarialPolicy {
    pub fn new(env: &EnvConfig, max_action: [f64; 2], seed: u64) -> Self {
        Self {
            env: env.clone(),
            max_action,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mode: 0,
            left: 0,
        }
    }

    fn steer(&self, ws: &WorldState, heading: f64) -> Vec<f64> {
        let err = wrap_angle(heading - ws.pose[2]);
        let w = (4.0 * err).clamp(-self.max_action[1], self.max_action[1]);
        let v = if err.abs() < PI / 2.0 { self.max_action[0] } else { 0.2 * self.max_action[0] };
        vec![v, w]
    }
}

impl Controller for AdversarialPolicy {
    fn name(&self) -> &str {
        "adversarial"
    }

    fn reset(&mut self) {
        self.left = 0;
    }

    fn decide(&mut self, ws: &WorldState, _q: StateId, _fsa: &Fsa) -> Result<Decision, HarnessError> {
        if self.left == 0 {
            self.mode = self.rng.random_range(0..4);
            self.left = self.rng.random_range(10..40);
        }
        self.left -= 1;
        let p = ws.position(&self.env);
        let action = match self.mode {
            0 => (0..2)
                .map(|i| self.rng.random_range(-self.max_action[i]..=self.max_action[i]))
                .collect(),
            // toward the c1 wall (y - x = w) or the c2 wall (y - x = -w)
            1 => self.steer(ws, 3.0 * PI / 4.0),
            2 => self.steer(ws, -PI / 4.0),
            _ => {
                let g = ws.goals[2];
                self.steer(ws, (g[1] - p[1]).atan2(g[0] - p[0]))
            }
        };
        Ok(Decision {
            action,
            ..Decision::default()
        })
    }
}
