use std::fmt;
use std::sync::Arc;

use super::{Formula, LogicError, Predicate, PropFormula};

/// Push negations down to atoms and rewrite `->`.
///
/// Fails when a negation sits above `F` or `U`: the result would need Always.
pub fn to_nnf(f: &Formula) -> Result<Formula, LogicError> {
    nnf(f, false)
}

fn nnf(f: &Formula, negate: bool) -> Result<Formula, LogicError> {
    Ok(match (f, negate) {
        (Formula::True, false) | (Formula::False, true) => Formula::True,
        (Formula::True, true) | (Formula::False, false) => Formula::False,
        (Formula::Atom(_), false) => f.clone(),
        (Formula::Atom(_), true) => Formula::not(f.clone()),
        (Formula::Not(a), n) => nnf(a, !n)?,
        (Formula::And(a, b), false) => Formula::and(nnf(a, false)?, nnf(b, false)?),
        (Formula::And(a, b), true) => Formula::or(nnf(a, true)?, nnf(b, true)?),
        (Formula::Or(a, b), false) => Formula::or(nnf(a, false)?, nnf(b, false)?),
        (Formula::Or(a, b), true) => Formula::and(nnf(a, true)?, nnf(b, true)?),
        (Formula::Implies(a, b), false) => Formula::or(nnf(a, true)?, nnf(b, false)?),
        (Formula::Implies(a, b), true) => Formula::and(nnf(a, false)?, nnf(b, true)?),
        (Formula::Eventually(a), false) => Formula::eventually(nnf(a, false)?),
        (Formula::Until(a, b), false) => Formula::until(nnf(a, false)?, nnf(b, false)?),
        (Formula::Eventually(_), true) | (Formula::Until(_, _), true) => {
            return Err(LogicError::NegatedTemporal(f.to_string()))
        }
    })
}

/// A possibly negated atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Literal {
    pub predicate: Arc<Predicate>,
    pub positive: bool,
}

impl Literal {
    pub fn value(&self, s: &[f64]) -> Result<f64, LogicError> {
        let v = self.predicate.value(s)?;
        Ok(if self.positive { v } else { -v })
    }

    /// The literal as a single predicate in `f(s) > 0` form.
    pub fn as_predicate(&self) -> Predicate {
        if self.positive {
            (*self.predicate).clone()
        } else {
            self.predicate.negated()
        }
    }

    pub fn to_formula(&self) -> Formula {
        let atom = Formula::Atom(self.predicate.clone());
        if self.positive {
            atom
        } else {
            Formula::not(atom)
        }
    }

    fn key(&self) -> (&str, bool) {
        (self.predicate.name(), self.positive)
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.positive {
            f.write_str("!")?;
        }
        f.write_str(self.predicate.name())
    }
}

/// Conjunction of clauses, each a disjunction of literals.
///
/// No clauses means `true`; an empty clause means `false`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnfFormula {
    pub clauses: Vec<Vec<Literal>>,
}

impl CnfFormula {
    pub fn robustness(&self, s: &[f64]) -> Result<f64, LogicError> {
        let mut worst = f64::INFINITY;
        for clause in &self.clauses {
            let mut best = f64::NEG_INFINITY;
            for lit in clause {
                best = best.max(lit.value(s)?);
            }
            worst = worst.min(best);
        }
        Ok(worst)
    }

    pub fn to_formula(&self) -> Formula {
        Formula::conjunction(
            self.clauses
                .iter()
                .map(|c| Formula::disjunction(c.iter().map(Literal::to_formula))),
        )
    }
}

impl fmt::Display for CnfFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.clauses.is_empty() {
            return f.write_str("true");
        }
        for (i, clause) in self.clauses.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            f.write_str("(")?;
            if clause.is_empty() {
                f.write_str("false")?;
            }
            for (j, lit) in clause.iter().enumerate() {
                if j > 0 {
                    f.write_str(" | ")?;
                }
                write!(f, "{lit}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Conjunctive normal form by distribution, with tautologies and subsumed
/// clauses removed. Literals in a clause and the clauses are sorted.
pub fn to_cnf(f: &PropFormula) -> Result<CnfFormula, LogicError> {
    let nnf = to_nnf(f.formula())?;
    let mut clauses = cnf_clauses(&nnf)?;
    for c in clauses.iter_mut() {
        c.sort_by(|a, b| a.key().cmp(&b.key()));
        c.dedup_by(|a, b| a.key() == b.key());
    }
    clauses.retain(|c| {
        !c.windows(2)
            .any(|w| w[0].predicate.name() == w[1].predicate.name())
    });
    // Drop clauses that are supersets of another clause.
    let mut keep: Vec<Vec<Literal>> = Vec::new();
    clauses.sort_by_key(|c| c.len());
    for c in clauses {
        let subsumed = keep
            .iter()
            .any(|k| k.iter().all(|l| c.iter().any(|m| m.key() == l.key())));
        if !subsumed {
            keep.push(c);
        }
    }
    keep.sort_by(|a, b| {
        let ka: Vec<_> = a.iter().map(Literal::key).collect();
        let kb: Vec<_> = b.iter().map(Literal::key).collect();
        ka.cmp(&kb)
    });
    Ok(CnfFormula { clauses: keep })
}

fn cnf_clauses(f: &Formula) -> Result<Vec<Vec<Literal>>, LogicError> {
    Ok(match f {
        Formula::True => vec![],
        Formula::False => vec![vec![]],
        Formula::Atom(p) => vec![vec![Literal {
            predicate: p.clone(),
            positive: true,
        }]],
        Formula::Not(inner) => match inner.as_ref() {
            Formula::Atom(p) => vec![vec![Literal {
                predicate: p.clone(),
                positive: false,
            }]],
            _ => unreachable!("input is in negation normal form"),
        },
        Formula::And(a, b) => {
            let mut out = cnf_clauses(a)?;
            out.extend(cnf_clauses(b)?);
            out
        }
        Formula::Or(a, b) => {
            let left = cnf_clauses(a)?;
            let right = cnf_clauses(b)?;
            let mut out = Vec::with_capacity(left.len() * right.len());
            for l in &left {
                for r in &right {
                    let mut c = l.clone();
                    c.extend(r.iter().cloned());
                    out.push(c);
                }
            }
            out
        }
        Formula::Implies(..) => unreachable!("input is in negation normal form"),
        Formula::Eventually(_) | Formula::Until(_, _) => {
            return Err(LogicError::NotPropositional(f.to_string()))
        }
    })
}
