use super::{Formula, LogicError};

/// Quantitative semantics of `f` over the trajectory `traj`, evaluated at its
/// first state. `true`/`false` map to `+inf`/`-inf`.
pub fn robustness<S: AsRef<[f64]>>(f: &Formula, traj: &[S]) -> Result<f64, LogicError> {
    if traj.is_empty() {
        return Err(LogicError::EmptyTrajectory);
    }
    Ok(suffix_robustness(f, traj)?[0])
}

/// Robustness of `f` at every suffix `traj[t..]`.
pub fn suffix_robustness<S: AsRef<[f64]>>(f: &Formula, traj: &[S]) -> Result<Vec<f64>, LogicError> {
    let n = traj.len();
    Ok(match f {
        Formula::True => vec![f64::INFINITY; n],
        Formula::False => vec![f64::NEG_INFINITY; n],
        Formula::Atom(p) => traj
            .iter()
            .map(|s| p.value(s.as_ref()))
            .collect::<Result<_, _>>()?,
        Formula::Not(a) => suffix_robustness(a, traj)?.into_iter().map(|v| -v).collect(),
        Formula::And(a, b) => zip_with(suffix_robustness(a, traj)?, suffix_robustness(b, traj)?, f64::min),
        Formula::Or(a, b) => zip_with(suffix_robustness(a, traj)?, suffix_robustness(b, traj)?, f64::max),
        Formula::Implies(a, b) => zip_with(suffix_robustness(a, traj)?, suffix_robustness(b, traj)?, |x, y| {
            (-x).max(y)
        }),
        Formula::Eventually(a) => {
            let mut r = suffix_robustness(a, traj)?;
            for t in (0..n.saturating_sub(1)).rev() {
                r[t] = r[t].max(r[t + 1]);
            }
            r
        }
        Formula::Until(a, b) => {
            // U[t] = max(rho_b[t], min(rho_a[t], U[t+1])), U[n] = -inf
            let ra = suffix_robustness(a, traj)?;
            let rb = suffix_robustness(b, traj)?;
            let mut out = vec![f64::NEG_INFINITY; n];
            let mut next = f64::NEG_INFINITY;
            for t in (0..n).rev() {
                next = rb[t].max(ra[t].min(next));
                out[t] = next;
            }
            out
        }
    })
}

fn zip_with(a: Vec<f64>, b: Vec<f64>, op: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.into_iter().zip(b).map(|(x, y)| op(x, y)).collect()
}

/// Robustness of a temporal-free formula at a single state.
pub fn state_robustness(f: &Formula, s: &[f64]) -> Result<f64, LogicError> {
    robustness(f, &[s])
}
