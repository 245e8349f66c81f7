//! Dense convex QP solver for the small per-step safety programs.
//!
//! Solves `min ½xᵀHx + cᵀx  s.t.  Gx ≤ d` with `H` positive definite using a
//! primal active-set method. A feasible starting point is found by a
//! proximal elastic phase-1 which also certifies infeasibility.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("problem data is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// One inequality `G_i x ≤ d_i` per row.
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        constraints: DMatrix<f64>,
        bounds: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = linear.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "Hessian is {}x{}, expected {n}x{n}",
                hessian.nrows(),
                hessian.ncols()
            )));
        }
        if constraints.ncols() != n || constraints.nrows() != bounds.len() {
            return Err(QpError::DimensionMismatch(format!(
                "constraints are {}x{} with {} bounds, expected {n} columns",
                constraints.nrows(),
                constraints.ncols(),
                bounds.len()
            )));
        }
        Ok(Self {
            hessian,
            linear,
            constraints,
            bounds,
        })
    }

    /// Problem without inequality rows.
    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self, QpError> {
        let n = linear.len();
        Self::new(hessian, linear, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_rows(&self) -> usize {
        self.bounds.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Largest row violation `max(0, G x - d)`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let r = &self.constraints * x - &self.bounds;
        r.iter().fold(0.0f64, |m, &v| m.max(v))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("QP serializes")
    }

    fn validate(&self) -> Result<(), QpError> {
        let finite = self.hessian.iter().all(|v| v.is_finite())
            && self.linear.iter().all(|v| v.is_finite())
            && self.constraints.iter().all(|v| v.is_finite())
            && self.bounds.iter().all(|v| v.is_finite());
        if !finite {
            return Err(QpError::NonFinite);
        }
        let sym = (&self.hessian - self.hessian.transpose()).amax();
        if sym > 1e-9 * (1.0 + self.hessian.amax()) {
            return Err(QpError::NotPositiveDefinite);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Rows in the final working set.
    pub active_set: Vec<usize>,
    /// One multiplier per row, zero off the active set.
    pub multipliers: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Scaled KKT residual: the largest of stationarity, primal feasibility,
/// dual feasibility and complementary slackness, each relative to the
/// magnitude of the terms involved.
pub fn kkt_residual(p: &QpProblem, sol: &QpSolution) -> f64 {
    let x = &sol.x;
    let lam = &sol.multipliers;
    let hx = &p.hessian * x;
    let gtl = p.constraints.transpose() * lam;
    let stat = (&hx + &p.linear + &gtl).amax() / (1.0 + p.linear.amax() + hx.amax() + gtl.amax());
    let row_scale = 1.0 + p.bounds.amax() + (&p.constraints * x).amax();
    let slack = &p.constraints * x - &p.bounds;
    let primal = slack.iter().fold(0.0f64, |m, &v| m.max(v)) / row_scale;
    let dual = lam.iter().fold(0.0f64, |m, &v| m.max(-v)) / (1.0 + lam.amax());
    let comp = slack
        .iter()
        .zip(lam.iter())
        .fold(0.0f64, |m, (&s, &l)| m.max((s * l).abs()))
        / ((1.0 + lam.amax()) * row_scale);
    stat.max(primal).max(dual).max(comp)
}

const FEAS_TOL: f64 = 1e-9;

/// Solve `p`, returning the global minimizer or an infeasible status.
pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.validate()?;
    let n = p.dim();
    let chol = Cholesky::new(p.hessian.clone()).ok_or(QpError::NotPositiveDefinite)?;
    let max_iter = 100 * n.max(1);
    let m = p.num_rows();

    let x_free = chol.solve(&(-&p.linear));
    let row_scale = 1.0 + p.bounds.amax() + p.constraints.amax() * (1.0 + x_free.amax());
    let start = if p.max_violation(&x_free) <= FEAS_TOL * row_scale {
        x_free
    } else {
        match phase_one(p, x_free, max_iter) {
            Some(x) => x,
            None => {
                let x = DVector::zeros(n);
                return Ok(QpSolution {
                    x,
                    status: QpStatus::Infeasible,
                    active_set: vec![],
                    multipliers: DVector::zeros(m),
                    kkt_residual: f64::INFINITY,
                    iterations: 0,
                });
            }
        }
    };

    let run = active_set(&p.hessian, &p.linear, &p.constraints, &p.bounds, start, max_iter);
    let mut multipliers = DVector::zeros(m);
    for (k, &row) in run.working.iter().enumerate() {
        multipliers[row] = run.lambda[k];
    }
    let mut sol = QpSolution {
        x: run.x,
        status: if run.converged {
            QpStatus::Optimal
        } else {
            QpStatus::MaxIterations
        },
        active_set: run.working,
        multipliers,
        kkt_residual: 0.0,
        iterations: run.iterations,
    };
    sol.kkt_residual = kkt_residual(p, &sol);
    Ok(sol)
}

/// Proximal point iterations on `min t  s.t.  Gx - t ≤ d, t ≥ 0`, started
/// from whichever of `x_free` and the origin violates the rows least. The
/// proximal weight shrinks geometrically so far-off starts move in a few
/// iterations; infeasibility is declared once it bottoms out and the
/// violation stops decreasing.
fn phase_one(p: &QpProblem, x_free: DVector<f64>, max_iter: usize) -> Option<DVector<f64>> {
    let n = p.dim();
    let m = p.num_rows();
    let origin = DVector::zeros(n);
    let mut center = if p.max_violation(&origin) < p.max_violation(&x_free) {
        origin
    } else {
        x_free
    };
    let row_norm = p.constraints.amax().max(1e-12);
    let tol = FEAS_TOL * (1.0 + p.bounds.amax() + row_norm);

    let mut g = DMatrix::zeros(m + 1, n + 1);
    g.view_mut((0, 0), (m, n)).copy_from(&p.constraints);
    for i in 0..m {
        g[(i, n)] = -1.0;
    }
    g[(m, n)] = -1.0;
    let mut d = DVector::zeros(m + 1);
    d.rows_mut(0, m).copy_from(&p.bounds);

    let mu_floor = 1e-12 * row_norm * row_norm;
    let mut mu = f64::INFINITY;
    let mut prev_t = f64::INFINITY;
    for _ in 0..200 {
        let viol = p.max_violation(&center);
        if viol <= tol {
            return Some(center);
        }
        mu = (1e-3 * row_norm * row_norm / (1.0 + viol)).min(0.1 * mu).max(mu_floor);
        let h = DMatrix::identity(n + 1, n + 1) * mu;
        let mut c = DVector::zeros(n + 1);
        c.rows_mut(0, n).copy_from(&(-mu * &center));
        c[n] = 1.0;
        let mut z0 = DVector::zeros(n + 1);
        z0.rows_mut(0, n).copy_from(&center);
        z0[n] = viol;
        let run = active_set(&h, &c, &g, &d, z0, max_iter.max(100));
        let x = run.x.rows(0, n).into_owned();
        let t = p.max_violation(&x);
        if t <= tol {
            return Some(x);
        }
        if mu <= mu_floor && prev_t.is_finite() && prev_t - t <= 1e-12 * (1.0 + prev_t) && run.converged {
            return None;
        }
        prev_t = t;
        center = x;
    }
    None
}

struct ActiveSetRun {
    x: DVector<f64>,
    working: Vec<usize>,
    lambda: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Primal active-set iterations from a feasible `x`.
fn active_set(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    d: &DVector<f64>,
    mut x: DVector<f64>,
    max_iter: usize,
) -> ActiveSetRun {
    let n = x.len();
    let m = d.len();
    let mut working: Vec<usize> = Vec::new();
    let grad_scale = 1.0 + c.amax() + h.amax() * (1.0 + x.amax());

    for iter in 0..max_iter {
        let grad = h * &x + c;
        let (step, lambda) = match equality_step(h, &grad, g, &working) {
            Some(v) => v,
            None => break,
        };
        // steps carry rounding noise proportional to the gradient scale
        let step_tol = 1e-12 * (1.0 + x.amax()) + 1e-14 * grad_scale;
        if step.amax() <= step_tol {
            let lambda_tol = 1e-10 * grad_scale.max(1.0 + lambda.iter().fold(0.0f64, |a, l| a.max(l.abs())));
            let (worst, min_l) = lambda
                .iter()
                .enumerate()
                .fold((usize::MAX, 0.0f64), |(bi, bl), (k, &l)| if l < bl { (k, l) } else { (bi, bl) });
            if worst == usize::MAX || min_l >= -lambda_tol {
                polish(&mut x, g, d, &working);
                return ActiveSetRun {
                    x,
                    working,
                    lambda,
                    converged: true,
                    iterations: iter,
                };
            }
            working.remove(worst);
            continue;
        }
        // Longest feasible step along `step`, capped at 1.
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..m {
            if working.contains(&i) {
                continue;
            }
            let gp: f64 = g.row(i).iter().zip(step.iter()).map(|(a, b)| a * b).sum();
            if gp <= 1e-14 * (1.0 + g.row(i).amax()) * step.amax() {
                continue;
            }
            let gx: f64 = g.row(i).iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            let ratio = ((d[i] - gx) / gp).max(0.0);
            // rows spanned by the working set cannot change along `step`
            if ratio < alpha && !spanned(g, &working, i) {
                alpha = ratio;
                blocking = Some(i);
            }
        }
        x += alpha * &step;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    let grad = h * &x + c;
    let lambda = equality_step(h, &grad, g, &working)
        .map(|(_, l)| l)
        .unwrap_or_else(|| vec![0.0; working.len()]);
    let _ = n;
    ActiveSetRun {
        x,
        working,
        lambda,
        converged: false,
        iterations: max_iter,
    }
}

/// Minimum-norm correction putting `x` back on the working rows. A large
/// linear cost leaves cancellation error of order `eps·|c|` in the steps;
/// this removes it from the constraint residuals.
fn polish(x: &mut DVector<f64>, g: &DMatrix<f64>, d: &DVector<f64>, working: &[usize]) {
    if working.is_empty() {
        return;
    }
    let a = DMatrix::from_fn(working.len(), g.ncols(), |r, c| g[(working[r], c)]);
    let r = DVector::from_iterator(
        working.len(),
        working.iter().map(|&i| d[i] - g.row(i).iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>()),
    );
    let tol = 1e-12 * a.amax().max(1.0);
    if let Ok(dx) = a.svd(true, true).solve(&r, tol) {
        if dx.iter().all(|v| v.is_finite()) {
            *x += dx;
        }
    }
}

/// Whether row `i` of `g` is a linear combination of the `working` rows.
fn spanned(g: &DMatrix<f64>, working: &[usize], i: usize) -> bool {
    if working.is_empty() {
        return false;
    }
    let rows: Vec<usize> = working.iter().copied().chain(std::iter::once(i)).collect();
    let a = DMatrix::from_fn(rows.len(), g.ncols(), |r, c| g[(rows[r], c)]);
    let scale = a.amax().max(1.0);
    let rank = |m: DMatrix<f64>| m.svd(false, false).rank(1e-10 * scale);
    let without = a.rows(0, working.len()).into_owned();
    rank(a) == rank(without)
}

/// The variable and coefficient of a row with exactly one nonzero entry.
fn single_variable(g: &DMatrix<f64>, row: usize) -> Option<(usize, f64)> {
    let mut found = None;
    for (col, &v) in g.row(row).iter().enumerate() {
        if v != 0.0 {
            if found.is_some() {
                return None;
            }
            found = Some((col, v));
        }
    }
    found
}

/// Solve the equality-constrained subproblem
/// `min ½pᵀHp + gradᵀp  s.t.  G_W p = 0`.
///
/// Working rows on a single variable fix that variable; the KKT system is
/// solved over the remaining variables and general rows, and multipliers
/// of fixing rows are recovered from the reduced gradient. This keeps a
/// large linear cost on a bounded variable out of the factorization.
fn equality_step(
    h: &DMatrix<f64>,
    grad: &DVector<f64>,
    g: &DMatrix<f64>,
    working: &[usize],
) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = grad.len();
    let mut fixed: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut general = Vec::new();
    for (j, &row) in working.iter().enumerate() {
        match single_variable(g, row) {
            Some((col, coef)) if fixed[col].is_none() => fixed[col] = Some((j, coef)),
            _ => general.push(j),
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let nf = free.len();
    let kg = general.len();
    let mut kkt = DMatrix::zeros(nf + kg, nf + kg);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = h[(i, j)];
        }
    }
    for (k, &j) in general.iter().enumerate() {
        for (a, &col) in free.iter().enumerate() {
            let v = g[(working[j], col)];
            kkt[(nf + k, a)] = v;
            kkt[(a, nf + k)] = v;
        }
    }
    let mut rhs = DVector::zeros(nf + kg);
    for (a, &i) in free.iter().enumerate() {
        rhs[a] = -grad[i];
    }
    let sol = if nf + kg == 0 {
        DVector::zeros(0)
    } else {
        kkt.lu().solve(&rhs)?
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut step = DVector::zeros(n);
    for (a, &i) in free.iter().enumerate() {
        step[i] = sol[a];
    }
    let mut lambda = vec![0.0; working.len()];
    for (k, &j) in general.iter().enumerate() {
        lambda[j] = sol[nf + k];
    }
    let hp = h * &step;
    for i in 0..n {
        if let Some((j, coef)) = fixed[i] {
            let mut r = grad[i] + hp[i];
            for &k in &general {
                r += lambda[k] * g[(working[k], i)];
            }
            lambda[j] = -r / coef;
        }
    }
    Some((step, lambda))
}
