use crate::automaton::{AutomatonError, Fsa, StateId};
use crate::logic::{Predicate, PredicateKind};

use super::ShieldError;

/// Point the Lyapunov function steers toward, and the edge it serves.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSelection {
    pub point: Vec<f64>,
    pub target: StateId,
    /// Robustness of the edge guard at `point`.
    pub score: f64,
}

/// Pick a goal point for leaving `q`.
///
/// The edge whose guard is most robust at `s` is chosen first. Candidate
/// points are the centers of the ball regions its guard terms require and,
/// for every pair of such balls within a term, the point between the
/// centers that is deepest in both. The candidate with the most robust
/// guard wins; ties go to the one closest to `s`.
pub fn select_goal(fsa: &Fsa, q: StateId, s: &[f64]) -> Result<GoalSelection, ShieldError> {
    if q >= fsa.num_states() {
        return Err(AutomatonError::UnknownState(q).into());
    }
    if fsa.is_final(q) || fsa.is_trap(q) {
        return Err(AutomatonError::NoProgress(q).into());
    }
    let values = fsa.atom_values(s)?;
    let mut edge = None;
    let mut edge_score = f64::NEG_INFINITY;
    for e in fsa.progress_edge_list(q) {
        let r = e.guard.robustness(&values);
        if edge.is_none() || r > edge_score {
            edge = Some(e);
            edge_score = r;
        }
    }
    let edge = edge.ok_or(AutomatonError::NoProgress(q))?;

    let atoms = fsa.atoms();
    let mut best: Option<(GoalSelection, f64)> = None;
    for term in &edge.guard.terms {
        let balls: Vec<Predicate> = term
            .iter()
            .map(|&(i, pos)| if pos { (*atoms[i]).clone() } else { atoms[i].negated() })
            .filter(|p| matches!(p.kind(), PredicateKind::BallInside { .. }))
            .collect();
        let mut candidates: Vec<Vec<f64>> = balls.iter().filter_map(|b| b.maximizer(s)).collect();
        for i in 0..balls.len() {
            for j in i + 1..balls.len() {
                if let Some(p) = deepest_common_point(&balls[i], &balls[j], s) {
                    candidates.push(p);
                }
            }
        }
        for point in candidates {
            let score = edge.guard.robustness(&fsa.atom_values(&point)?);
            if !score.is_finite() {
                continue;
            }
            let dist: f64 = point.iter().zip(s).map(|(a, b)| (a - b).powi(2)).sum();
            let better = match &best {
                None => true,
                Some((b, d)) => score > b.score + 1e-12 || ((score - b.score).abs() <= 1e-12 && dist < *d),
            };
            if better {
                best = Some((
                    GoalSelection {
                        point,
                        target: edge.target,
                        score,
                    },
                    dist,
                ));
            }
        }
    }
    best.map(|(g, _)| g).ok_or(ShieldError::NoFiniteGoal(q))
}

/// Point on the segment between two ball centers maximizing
/// `min(r1 - d1, r2 - d2)`: distance `(D + r1 - r2) / 2` from the first
/// center, clamped to the segment.
fn deepest_common_point(a: &Predicate, b: &Predicate, s: &[f64]) -> Option<Vec<f64>> {
    let (
        PredicateKind::BallInside {
            projection: pa,
            center: ca,
            radius: ra,
        },
        PredicateKind::BallInside {
            projection: pb,
            center: cb,
            radius: rb,
        },
    ) = (a.kind(), b.kind())
    else {
        return None;
    };
    if pa != pb {
        return None;
    }
    let dist = ca.iter().zip(cb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    if dist == 0.0 {
        return None;
    }
    let t = ((dist + ra - rb) / 2.0).clamp(0.0, dist) / dist;
    let mut out = s.to_vec();
    for (k, &i) in pa.iter().enumerate() {
        out[i] = ca[k] + t * (cb[k] - ca[k]);
    }
    Some(out)
}
