//! Action filtering with control barrier and control Lyapunov functions.
//!
//! The filter solves, for a control-affine system `ṡ = f(s) + g(s) a`,
//!
//! ```text
//! min  |a_cbf|² + |a_clf|² + K δ
//! s.t. ∇h·(f + g(a_rl + a_cbf + a_clf)) + α h ≥ 0   for every barrier h
//!      ∇V·(f + g(a_rl + a_cbf + a_clf)) + c V ≤ δ,  δ ≥ 0
//!      per-part action boxes
//! ```
//!
//! and applies `a_rl + a_cbf + a_clf`.

mod filter;
mod goal;
mod safe_set;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automaton::{AutomatonError, StateId};
use crate::logic::{LogicError, Predicate};
use crate::product::FilterStatus;
use crate::qpsolver::{self, QpError, QpProblem, QpStatus};

pub use filter::{ActionFilter, FilterContext, FilterFactory, FilterOutcome, FilterRegistry, Passthrough, QpFilter};
pub use goal::{select_goal, GoalSelection};
pub use safe_set::{disjunct_rule, fsa_safe_set, DisjunctRule, LeastSatisfied, MostSatisfied, DISJUNCT_RULES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShieldError {
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no goal candidate with finite robustness leaves q{0}")]
    NoFiniteGoal(StateId),
    #[error("safe set of q{0} contains an unsatisfiable clause")]
    EmptyClause(StateId),
    #[error("unknown disjunct rule '{0}'")]
    UnknownRule(String),
    #[error("unknown filter configuration '{0}'")]
    UnknownConfiguration(String),
}

/// Control-affine dynamics evaluated at one state: `ṡ = drift + input · a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlAffine {
    pub drift: DVector<f64>,
    pub input: DMatrix<f64>,
}

impl ControlAffine {
    pub fn state_dim(&self) -> usize {
        self.drift.len()
    }

    pub fn action_dim(&self) -> usize {
        self.input.ncols()
    }
}

/// Constraint `h(s) > 0` enforced through `ḣ + α h ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierFunction {
    pub label: String,
    pub predicate: Predicate,
}

impl BarrierFunction {
    pub fn new(label: impl Into<String>, predicate: Predicate) -> Self {
        Self {
            label: label.into(),
            predicate,
        }
    }

    pub fn value_and_gradient(&self, s: &[f64]) -> Result<(f64, Vec<f64>), ShieldError> {
        Ok(self.predicate.value_and_gradient(s)?)
    }
}

/// `V(s) = |s - point|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovGoal {
    pub point: Vec<f64>,
}

impl LyapunovGoal {
    pub fn value_and_gradient(&self, s: &[f64]) -> (f64, Vec<f64>) {
        let diff: Vec<f64> = s.iter().zip(&self.point).map(|(a, b)| a - b).collect();
        let v = diff.iter().map(|d| d * d).sum();
        (v, diff.iter().map(|d| 2.0 * d).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ActionBounds {
    pub fn zero(m: usize) -> Self {
        Self {
            lower: vec![0.0; m],
            upper: vec![0.0; m],
        }
    }

    pub fn symmetric(limits: &[f64]) -> Self {
        Self {
            lower: limits.iter().map(|l| -l).collect(),
            upper: limits.to_vec(),
        }
    }

    pub fn clamp(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShieldParams {
    /// `α`
    pub barrier_gain: f64,
    /// `c` in `V̇ ≤ -c V + δ`
    pub lyapunov_decay: f64,
    /// `K`: linear cost on the Lyapunov relaxation.
    pub relaxation_weight: f64,
    /// Quadratic cost on the relaxation, keeps the Hessian positive definite.
    pub relaxation_regularization: f64,
    pub cbf_bounds: ActionBounds,
    pub clf_bounds: ActionBounds,
    /// How one literal is chosen per safe-set clause: `max` or `min`.
    pub disjunct_rule: String,
}

impl Default for ShieldParams {
    fn default() -> Self {
        Self {
            barrier_gain: 1.0,
            lyapunov_decay: 1.0,
            relaxation_weight: 1e10,
            relaxation_regularization: 1.0,
            cbf_bounds: ActionBounds::symmetric(&[2.0, 4.0]),
            clf_bounds: ActionBounds::symmetric(&[0.5, 1.0]),
            disjunct_rule: "max".into(),
        }
    }
}

/// Meaning of each QP row.
#[derive(Debug, Clone, PartialEq)]
pub enum RowLabel {
    Barrier(String),
    Lyapunov,
    CbfUpper(usize),
    CbfLower(usize),
    ClfUpper(usize),
    ClfLower(usize),
    RelaxationNonNegative,
}

/// Everything the filter QP needs at one state.
#[derive(Debug, Clone)]
pub struct QpInputs<'a> {
    pub s: &'a [f64],
    pub a_rl: &'a [f64],
    pub dynamics: &'a ControlAffine,
    pub barriers: &'a [BarrierFunction],
    pub goal: Option<&'a LyapunovGoal>,
    pub cbf_bounds: &'a ActionBounds,
    pub clf_bounds: &'a ActionBounds,
}

/// Assembled filter QP over `x = [a_cbf, a_clf, δ]`.
#[derive(Debug, Clone)]
pub struct ShieldQp {
    pub problem: QpProblem,
    pub rows: Vec<RowLabel>,
    pub action_dim: usize,
    /// `h(s)` for every barrier row, in row order.
    pub barrier_values: Vec<f64>,
}

struct Linearized {
    /// `∇h · g`
    lg: Vec<f64>,
    /// `∇h · (f + g a_rl)`
    lf: f64,
}

fn linearize(grad: &[f64], dyn_: &ControlAffine, f_hat: &DVector<f64>) -> Linearized {
    let m = dyn_.action_dim();
    let lg = (0..m)
        .map(|j| grad.iter().enumerate().map(|(i, g)| g * dyn_.input[(i, j)]).sum())
        .collect();
    let lf = grad.iter().zip(f_hat.iter()).map(|(g, f)| g * f).sum();
    Linearized { lg, lf }
}

fn check_finite(what: &str, xs: impl IntoIterator<Item = f64>) -> Result<(), ShieldError> {
    if xs.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(ShieldError::NonFinite(what.into()))
    }
}

fn check_inputs(inp: &QpInputs) -> Result<(usize, usize), ShieldError> {
    let n = inp.dynamics.state_dim();
    let m = inp.dynamics.action_dim();
    if inp.s.len() != n || inp.dynamics.input.nrows() != n {
        return Err(ShieldError::DimensionMismatch(format!(
            "state has {} entries, dynamics expect {n}",
            inp.s.len()
        )));
    }
    if inp.a_rl.len() != m {
        return Err(ShieldError::DimensionMismatch(format!(
            "action has {} entries, dynamics expect {m}",
            inp.a_rl.len()
        )));
    }
    for b in [inp.cbf_bounds, inp.clf_bounds] {
        if b.lower.len() != m || b.upper.len() != m {
            return Err(ShieldError::DimensionMismatch(format!("action bounds must have {m} entries")));
        }
    }
    check_finite("state", inp.s.iter().copied())?;
    check_finite("action", inp.a_rl.iter().copied())?;
    check_finite("drift", inp.dynamics.drift.iter().copied())?;
    check_finite("input matrix", inp.dynamics.input.iter().copied())?;
    Ok((n, m))
}

/// Build the filter QP.
pub fn assemble_qp(inp: &QpInputs, params: &ShieldParams) -> Result<ShieldQp, ShieldError> {
    let (_, m) = check_inputs(inp)?;
    let nv = 2 * m + 1;
    let d = 2 * m;
    let f_hat = &inp.dynamics.drift + &inp.dynamics.input * DVector::from_row_slice(inp.a_rl);

    let mut rows: Vec<(Vec<f64>, f64, RowLabel)> = Vec::new();
    let mut barrier_values = Vec::new();
    for b in inp.barriers {
        let (h, grad) = b.value_and_gradient(inp.s)?;
        check_finite(&b.label, std::iter::once(h).chain(grad.iter().copied()))?;
        let lin = linearize(&grad, inp.dynamics, &f_hat);
        let mut g = vec![0.0; nv];
        for j in 0..m {
            g[j] = -lin.lg[j];
            g[m + j] = -lin.lg[j];
        }
        rows.push((g, lin.lf + params.barrier_gain * h, RowLabel::Barrier(b.label.clone())));
        barrier_values.push(h);
    }
    if let Some(goal) = inp.goal {
        if goal.point.len() != inp.s.len() {
            return Err(ShieldError::DimensionMismatch("goal point".into()));
        }
        let (v, grad) = goal.value_and_gradient(inp.s);
        check_finite("goal", std::iter::once(v).chain(grad.iter().copied()))?;
        let lin = linearize(&grad, inp.dynamics, &f_hat);
        let mut g = vec![0.0; nv];
        for j in 0..m {
            g[j] = lin.lg[j];
            g[m + j] = lin.lg[j];
        }
        g[d] = -1.0;
        rows.push((g, -lin.lf - params.lyapunov_decay * v, RowLabel::Lyapunov));
    }
    for (offset, bounds, upper, lower) in [
        (0, inp.cbf_bounds, RowLabel::CbfUpper as fn(usize) -> RowLabel, RowLabel::CbfLower as fn(usize) -> RowLabel),
        (m, inp.clf_bounds, RowLabel::ClfUpper, RowLabel::ClfLower),
    ] {
        for j in 0..m {
            let mut g = vec![0.0; nv];
            g[offset + j] = 1.0;
            rows.push((g, bounds.upper[j], upper(j)));
            let mut g = vec![0.0; nv];
            g[offset + j] = -1.0;
            rows.push((g, -bounds.lower[j], lower(j)));
        }
    }
    let mut g = vec![0.0; nv];
    g[d] = -1.0;
    rows.push((g, 0.0, RowLabel::RelaxationNonNegative));

    let mut hessian = DMatrix::identity(nv, nv) * 2.0;
    hessian[(d, d)] = 2.0 * params.relaxation_regularization;
    let mut linear = DVector::zeros(nv);
    linear[d] = params.relaxation_weight;
    let constraints = DMatrix::from_fn(rows.len(), nv, |i, j| rows[i].0[j]);
    let bounds = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let problem = QpProblem::new(hessian, linear, constraints, bounds)?;
    Ok(ShieldQp {
        problem,
        rows: rows.into_iter().map(|r| r.2).collect(),
        action_dim: m,
        barrier_values,
    })
}

/// Filtered action parts and how they were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub a_cbf: Vec<f64>,
    pub a_clf: Vec<f64>,
    pub delta: f64,
    pub status: FilterStatus,
    pub barrier_values: Vec<f64>,
}

const FEASIBILITY_TOL: f64 = 1e-7;

fn accept(qp: &ShieldQp) -> Result<Option<DVector<f64>>, ShieldError> {
    let sol = qpsolver::solve(&qp.problem)?;
    let ok = sol.status == QpStatus::Optimal
        && qp.problem.max_violation(&sol.x) <= FEASIBILITY_TOL * (1.0 + qp.problem.bounds.amax());
    Ok(ok.then_some(sol.x))
}

/// Solve the filter QP. When it is infeasible the Lyapunov row is dropped;
/// if the barriers alone are still infeasible the action minimizing the
/// squared barrier violation inside the boxes is returned.
pub fn filter_action(inp: &QpInputs, params: &ShieldParams) -> Result<FilterResult, ShieldError> {
    let qp = assemble_qp(inp, params)?;
    let m = qp.action_dim;
    let split = |x: &DVector<f64>, status, barrier_values: Vec<f64>| FilterResult {
        a_cbf: inp.cbf_bounds.clamp(x.rows(0, m).as_slice()),
        a_clf: inp.clf_bounds.clamp(x.rows(m, m).as_slice()),
        delta: x[2 * m].max(0.0),
        status,
        barrier_values,
    };
    if let Some(x) = accept(&qp)? {
        return Ok(split(&x, FilterStatus::Optimal, qp.barrier_values));
    }
    if inp.goal.is_some() {
        let relaxed = assemble_qp(&QpInputs { goal: None, ..inp.clone() }, params)?;
        if let Some(x) = accept(&relaxed)? {
            return Ok(split(&x, FilterStatus::RelaxedGoal, relaxed.barrier_values));
        }
    }
    let x = least_violation(&qp)?;
    Ok(split(&x, FilterStatus::LeastViolation, qp.barrier_values))
}

/// `min μ|â|² + Σ σ_i²` with barrier rows softened by free slacks `σ_i`
/// and the action boxes kept hard.
fn least_violation(qp: &ShieldQp) -> Result<DVector<f64>, ShieldError> {
    const ACTION_WEIGHT: f64 = 1e-6;
    let m = qp.action_dim;
    let na = 2 * m;
    let barrier_rows: Vec<usize> = (0..qp.rows.len())
        .filter(|&i| matches!(qp.rows[i], RowLabel::Barrier(_)))
        .collect();
    let box_rows: Vec<usize> = (0..qp.rows.len())
        .filter(|&i| {
            matches!(
                qp.rows[i],
                RowLabel::CbfUpper(_) | RowLabel::CbfLower(_) | RowLabel::ClfUpper(_) | RowLabel::ClfLower(_)
            )
        })
        .collect();
    let k = barrier_rows.len();
    let nv = na + k;
    let mut hessian = DMatrix::identity(nv, nv) * 2.0;
    for i in 0..na {
        hessian[(i, i)] = 2.0 * ACTION_WEIGHT;
    }
    let nrows = k + box_rows.len();
    let mut g = DMatrix::zeros(nrows, nv);
    let mut d = DVector::zeros(nrows);
    for (r, &i) in barrier_rows.iter().chain(&box_rows).enumerate() {
        for j in 0..na {
            g[(r, j)] = qp.problem.constraints[(i, j)];
        }
        d[r] = qp.problem.bounds[i];
        if r < k {
            g[(r, na + r)] = -1.0;
        }
    }
    let p = QpProblem::new(hessian, DVector::zeros(nv), g, d)?;
    let sol = qpsolver::solve(&p)?;
    let mut x = DVector::zeros(na + 1);
    x.rows_mut(0, na).copy_from(&sol.x.rows(0, na));
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrator(n: usize) -> ControlAffine {
        ControlAffine {
            drift: DVector::zeros(n),
            input: DMatrix::identity(n, n),
        }
    }

    fn wide(m: usize) -> ActionBounds {
        ActionBounds::symmetric(&vec![10.0; m])
    }

    #[test]
    fn one_dimensional_barrier_splits_the_correction() {
        let dynamics = integrator(1);
        let barriers = [BarrierFunction::new("h", Predicate::linear("h", vec![1.0], 0.0).unwrap())];
        let (cb, lb) = (wide(1), wide(1));
        let inp = QpInputs {
            s: &[0.0],
            a_rl: &[-1.0],
            dynamics: &dynamics,
            barriers: &barriers,
            goal: None,
            cbf_bounds: &cb,
            clf_bounds: &lb,
        };
        let r = filter_action(&inp, &ShieldParams::default()).unwrap();
        assert_eq!(r.status, FilterStatus::Optimal);
        assert!((r.a_cbf[0] - 0.5).abs() < 1e-8 && (r.a_clf[0] - 0.5).abs() < 1e-8, "{r:?}");
        assert!(r.delta.abs() < 1e-8);
    }

    #[test]
    fn inactive_constraints_leave_the_action_alone() {
        let dynamics = integrator(2);
        let barriers = [BarrierFunction::new(
            "h",
            Predicate::ball_outside("h", 2, vec![5.0, 5.0], 1.0).unwrap(),
        )];
        let (cb, lb) = (wide(2), wide(2));
        let inp = QpInputs {
            s: &[0.0, 0.0],
            a_rl: &[0.3, -0.2],
            dynamics: &dynamics,
            barriers: &barriers,
            goal: None,
            cbf_bounds: &cb,
            clf_bounds: &lb,
        };
        let r = filter_action(&inp, &ShieldParams::default()).unwrap();
        assert!(r.a_cbf.iter().chain(&r.a_clf).all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn lyapunov_row_pulls_toward_the_goal() {
        let dynamics = integrator(2);
        let goal = LyapunovGoal { point: vec![1.0, 0.0] };
        let (cb, lb) = (ActionBounds::zero(2), wide(2));
        let inp = QpInputs {
            s: &[0.0, 0.0],
            a_rl: &[0.0, 0.0],
            dynamics: &dynamics,
            barriers: &[],
            goal: Some(&goal),
            cbf_bounds: &cb,
            clf_bounds: &lb,
        };
        let r = filter_action(&inp, &ShieldParams::default()).unwrap();
        // V = 1, ∇V = (-2, 0): need -2 a_x + 1 ≤ 0
        assert!((r.a_clf[0] - 0.5).abs() < 1e-8 && r.a_clf[1].abs() < 1e-8, "{r:?}");
        assert!(r.a_cbf.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn tight_goal_bounds_use_the_relaxation() {
        let dynamics = integrator(1);
        let goal = LyapunovGoal { point: vec![10.0] };
        let (cb, lb) = (ActionBounds::zero(1), ActionBounds::symmetric(&[1.0]));
        let inp = QpInputs {
            s: &[0.0],
            a_rl: &[0.0],
            dynamics: &dynamics,
            barriers: &[],
            goal: Some(&goal),
            cbf_bounds: &cb,
            clf_bounds: &lb,
        };
        let r = filter_action(&inp, &ShieldParams::default()).unwrap();
        assert_eq!(r.status, FilterStatus::Optimal);
        assert!((r.a_clf[0] - 1.0).abs() < 1e-8);
        // -20·1 + 100 ≤ δ
        assert!((r.delta - 80.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn conflicting_barriers_fall_back_to_least_violation() {
        let dynamics = integrator(1);
        let barriers = [
            BarrierFunction::new("lo", Predicate::linear("lo", vec![1.0], -1.0).unwrap()),
            BarrierFunction::new("hi", Predicate::linear("hi", vec![-1.0], -1.0).unwrap()),
        ];
        let (cb, lb) = (wide(1), wide(1));
        let inp = QpInputs {
            s: &[0.0],
            a_rl: &[0.0],
            dynamics: &dynamics,
            barriers: &barriers,
            goal: None,
            cbf_bounds: &cb,
            clf_bounds: &lb,
        };
        let r = filter_action(&inp, &ShieldParams::default()).unwrap();
        assert_eq!(r.status, FilterStatus::LeastViolation);
        // symmetric violation: total correction 0
        assert!((r.a_cbf[0] + r.a_clf[0]).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let dynamics = integrator(2);
        let (cb, lb) = (wide(2), wide(2));
        let base = QpInputs {
            s: &[0.0, 0.0],
            a_rl: &[0.0, 0.0],
            dynamics: &dynamics,
            barriers: &[],
            goal: None,
            cbf_bounds: &cb,
            clf_bounds: &lb,
        };
        let p = ShieldParams::default();
        assert!(matches!(
            assemble_qp(&QpInputs { a_rl: &[0.0], ..base.clone() }, &p),
            Err(ShieldError::DimensionMismatch(_))
        ));
        assert!(matches!(
            assemble_qp(&QpInputs { s: &[f64::NAN, 0.0], ..base.clone() }, &p),
            Err(ShieldError::NonFinite(_))
        ));
        let qp = assemble_qp(&base, &p).unwrap();
        assert_eq!(qp.problem.dim(), 5);
        assert_eq!(qp.rows.len(), 9);
    }
}
