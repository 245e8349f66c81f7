//! Canonical residual formulas used as automaton states.
//!
//! Nodes are in negation normal form with n-ary, sorted and deduplicated
//! conjunctions and disjunctions, so structurally equal residuals are the
//! same state.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::logic::{to_nnf, Formula, LogicError, Predicate};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) enum Node {
    False,
    True,
    Lit(usize, bool),
    And(Vec<Node>),
    Or(Vec<Node>),
    Eventually(Box<Node>),
    Until(Box<Node>, Box<Node>),
}

impl Node {
    pub fn from_formula(f: &Formula, atom_index: &BTreeMap<String, usize>) -> Result<Node, LogicError> {
        let nnf = to_nnf(f)?;
        Ok(Self::from_nnf(&nnf, atom_index))
    }

    fn from_nnf(f: &Formula, idx: &BTreeMap<String, usize>) -> Node {
        match f {
            Formula::True => Node::True,
            Formula::False => Node::False,
            Formula::Atom(p) => Node::Lit(idx[p.name()], true),
            Formula::Not(a) => match a.as_ref() {
                Formula::Atom(p) => Node::Lit(idx[p.name()], false),
                _ => unreachable!("negation normal form"),
            },
            Formula::And(a, b) => and(vec![Self::from_nnf(a, idx), Self::from_nnf(b, idx)]),
            Formula::Or(a, b) => or(vec![Self::from_nnf(a, idx), Self::from_nnf(b, idx)]),
            Formula::Eventually(a) => eventually(Self::from_nnf(a, idx)),
            Formula::Until(a, b) => until(Self::from_nnf(a, idx), Self::from_nnf(b, idx)),
            Formula::Implies(..) => unreachable!("negation normal form"),
        }
    }

    pub fn to_formula(&self, atoms: &[Arc<Predicate>]) -> Formula {
        match self {
            Node::True => Formula::True,
            Node::False => Formula::False,
            Node::Lit(i, true) => Formula::Atom(atoms[*i].clone()),
            Node::Lit(i, false) => Formula::not(Formula::Atom(atoms[*i].clone())),
            Node::And(xs) => Formula::conjunction(xs.iter().map(|x| x.to_formula(atoms))),
            Node::Or(xs) => Formula::disjunction(xs.iter().map(|x| x.to_formula(atoms))),
            Node::Eventually(a) => Formula::eventually(a.to_formula(atoms)),
            Node::Until(a, b) => Formula::until(a.to_formula(atoms), b.to_formula(atoms)),
        }
    }

    /// One-step residual after observing the truth values in `assignment`.
    pub fn progress(&self, assignment: &[bool]) -> Node {
        match self {
            Node::True => Node::True,
            Node::False => Node::False,
            Node::Lit(i, pos) => {
                if assignment[*i] == *pos {
                    Node::True
                } else {
                    Node::False
                }
            }
            Node::And(xs) => and(xs.iter().map(|x| x.progress(assignment)).collect()),
            Node::Or(xs) => or(xs.iter().map(|x| x.progress(assignment)).collect()),
            Node::Eventually(a) => or(vec![a.progress(assignment), self.clone()]),
            Node::Until(a, b) => or(vec![
                b.progress(assignment),
                and(vec![a.progress(assignment), self.clone()]),
            ]),
        }
    }

    fn children_as_set(&self, conj: bool) -> Vec<&Node> {
        match (self, conj) {
            (Node::And(xs), true) | (Node::Or(xs), false) => xs.iter().collect(),
            _ => vec![self],
        }
    }
}

pub(crate) fn eventually(a: Node) -> Node {
    match a {
        Node::True => Node::True,
        Node::False => Node::False,
        Node::Eventually(_) => a,
        other => Node::Eventually(Box::new(other)),
    }
}

pub(crate) fn until(a: Node, b: Node) -> Node {
    match (a, b) {
        (_, Node::True) => Node::True,
        (_, Node::False) => Node::False,
        (Node::False, b) => b,
        (Node::True, b) => eventually(b),
        (a, b) => Node::Until(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn and(items: Vec<Node>) -> Node {
    junction(items, true)
}

pub(crate) fn or(items: Vec<Node>) -> Node {
    junction(items, false)
}

/// Shared simplifier for `And` (`conj`) and `Or` (`!conj`).
fn junction(items: Vec<Node>, conj: bool) -> Node {
    let (unit, zero) = if conj {
        (Node::True, Node::False)
    } else {
        (Node::False, Node::True)
    };
    let mut flat = Vec::with_capacity(items.len());
    for item in items {
        match item {
            Node::And(xs) if conj => flat.extend(xs),
            Node::Or(xs) if !conj => flat.extend(xs),
            x if x == zero => return zero,
            x if x == unit => {}
            x => flat.push(x),
        }
    }
    flat.sort();
    flat.dedup();
    // x and !x
    for w in flat.windows(2) {
        if let (Node::Lit(i, a), Node::Lit(j, b)) = (&w[0], &w[1]) {
            if i == j && a != b {
                return zero;
            }
        }
    }
    // Absorption: in a conjunction, drop any disjunction whose children
    // include all members of another element (and dually).
    let dual_children: Vec<Vec<&Node>> = flat.iter().map(|x| x.children_as_set(!conj)).collect();
    let mut keep = vec![true; flat.len()];
    for i in 0..flat.len() {
        let is_dual = matches!((&flat[i], conj), (Node::Or(_), true) | (Node::And(_), false));
        if !is_dual {
            continue;
        }
        for j in 0..flat.len() {
            if i == j || !keep[j] {
                continue;
            }
            if dual_children[j].iter().all(|c| dual_children[i].contains(c)) {
                keep[i] = false;
                break;
            }
        }
    }
    let mut out: Vec<Node> = flat
        .into_iter()
        .zip(keep)
        .filter_map(|(x, k)| k.then_some(x))
        .collect();
    match out.len() {
        0 => unit,
        1 => out.pop().unwrap(),
        _ if conj => Node::And(out),
        _ => Node::Or(out),
    }
}
