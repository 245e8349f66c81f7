use std::fmt::Debug;

use crate::automaton::{AutomatonError, Fsa, StateId};
use crate::logic::{to_cnf, Formula, PropFormula};

use super::{BarrierFunction, ShieldError};

/// Chooses which literal of a safe-set clause becomes a barrier.
pub trait DisjunctRule: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    /// Index into `values`, the literal robustness values at the current state.
    fn select(&self, values: &[f64]) -> usize;
}

/// The literal with the largest robustness; ties go to the first.
#[derive(Debug, Clone, Copy, Default)]
pub struct MostSatisfied;

impl DisjunctRule for MostSatisfied {
    fn name(&self) -> &'static str {
        "max"
    }

    fn select(&self, values: &[f64]) -> usize {
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = i;
            }
        }
        best
    }
}

/// The literal with the smallest robustness; ties go to the first.
#[derive(Debug, Clone, Copy, Default)]
pub struct LeastSatisfied;

impl DisjunctRule for LeastSatisfied {
    fn name(&self) -> &'static str {
        "min"
    }

    fn select(&self, values: &[f64]) -> usize {
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v < values[best] {
                best = i;
            }
        }
        best
    }
}

pub const DISJUNCT_RULES: &[&str] = &["max", "min"];

pub fn disjunct_rule(name: &str) -> Result<Box<dyn DisjunctRule>, ShieldError> {
    match name {
        "max" => Ok(Box::new(MostSatisfied)),
        "min" => Ok(Box::new(LeastSatisfied)),
        other => Err(ShieldError::UnknownRule(other.into())),
    }
}

/// Barriers keeping the automaton out of its traps from `q`: the negated
/// trap guard in CNF, one literal per clause picked by `rule` at `s`.
/// Final and trap states, and states with no trap edge, yield no barriers.
pub fn fsa_safe_set(
    fsa: &Fsa,
    q: StateId,
    s: &[f64],
    rule: &dyn DisjunctRule,
) -> Result<Vec<BarrierFunction>, ShieldError> {
    if q >= fsa.num_states() {
        return Err(AutomatonError::UnknownState(q).into());
    }
    if fsa.is_final(q) || fsa.is_trap(q) {
        return Ok(Vec::new());
    }
    let Some(trap) = fsa.trap_guard(q)? else {
        return Ok(Vec::new());
    };
    let safe = PropFormula::new(Formula::not(trap.into_formula()))?;
    let cnf = to_cnf(&safe)?;
    let mut out = Vec::with_capacity(cnf.clauses.len());
    for clause in &cnf.clauses {
        if clause.is_empty() {
            return Err(ShieldError::EmptyClause(q));
        }
        let values = clause
            .iter()
            .map(|l| l.value(s))
            .collect::<Result<Vec<_>, _>>()?;
        let lit = &clause[rule.select(&values)];
        out.push(BarrierFunction::new(format!("q{q}:{lit}"), lit.as_predicate()));
    }
    Ok(out)
}
