//! Compilation of scTLTL formulas into guarded finite state automata by
//! formula progression, with final and trap state classification.

mod canon;
mod export;
mod qm;

pub use export::{EdgeDocument, FsaDocument, StateDocument};

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::logic::{Bindings, Formula, LogicError, Predicate, PropFormula};
use canon::Node;

pub type StateId = usize;

/// Default cap on the number of automaton states produced by [`compile`].
pub const DEFAULT_STATE_CAP: usize = 4096;

/// Largest atom count accepted by the assignment enumeration.
pub const MAX_ATOMS: usize = 16;

/// Truth value per atom name.
pub type GuardAssignment = BTreeMap<String, bool>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutomatonError {
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("automaton exceeds the state cap of {cap}")]
    StateCap { cap: usize },
    #[error("formula has {count} atoms, at most {max} are supported")]
    TooManyAtoms { count: usize, max: usize },
    #[error("atom '{0}' has no truth value in the assignment")]
    Unassigned(String),
    #[error("unknown automaton state {0}")]
    UnknownState(StateId),
    #[error("state q{state} has {count} enabled guards")]
    NonDeterministic { state: StateId, count: usize },
    #[error("state q{0} is final or trap and has no progress predicate")]
    NoProgress(StateId),
}

/// A guard in disjunctive normal form over the automaton's atoms.
///
/// No terms is `false`; a term without literals is `true`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Guard {
    pub terms: Vec<Vec<(usize, bool)>>,
}

impl Guard {
    fn from_implicants(n_atoms: usize, implicants: &[qm::Implicant]) -> Self {
        let terms = implicants
            .iter()
            .map(|imp| {
                (0..n_atoms)
                    .filter(|&i| imp.care & (1 << i) != 0)
                    .map(|i| (i, imp.value & (1 << i) != 0))
                    .collect()
            })
            .collect();
        Guard { terms }
    }

    /// Robustness given precomputed atom values.
    pub fn robustness(&self, atom_values: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.iter()
                    .map(|&(i, pos)| if pos { atom_values[i] } else { -atom_values[i] })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn holds(&self, assignment: &[bool]) -> bool {
        self.terms
            .iter()
            .any(|t| t.iter().all(|&(i, pos)| assignment[i] == pos))
    }

    pub fn is_true(&self) -> bool {
        self.terms.iter().any(|t| t.is_empty())
    }

    pub fn to_formula(&self, atoms: &[Arc<Predicate>]) -> Formula {
        Formula::disjunction(self.terms.iter().map(|t| {
            Formula::conjunction(t.iter().map(|&(i, pos)| {
                let a = Formula::Atom(atoms[i].clone());
                if pos {
                    a
                } else {
                    Formula::not(a)
                }
            }))
        }))
    }

    pub(crate) fn render(&self, atoms: &[Arc<Predicate>]) -> String {
        if self.terms.is_empty() {
            return "false".into();
        }
        let several = self.terms.len() > 1;
        self.terms
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return "true".to_string();
                }
                let body = t
                    .iter()
                    .map(|&(i, pos)| format!("{}{}", if pos { "" } else { "!" }, atoms[i].name()))
                    .collect::<Vec<_>>()
                    .join(" & ");
                if several && t.len() > 1 {
                    format!("({body})")
                } else {
                    body
                }
            })
            .collect::<Vec<_>>()
            .join(" | ")
    }
}

#[derive(Debug, Clone)]
pub struct FsaState {
    pub id: StateId,
    residual: Node,
    pub is_final: bool,
    pub is_trap: bool,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub source: StateId,
    pub target: StateId,
    pub guard: Guard,
}

/// Deterministic guarded automaton equivalent to an scTLTL formula.
#[derive(Debug, Clone)]
pub struct Fsa {
    atoms: Vec<Arc<Predicate>>,
    states: Vec<FsaState>,
    initial: StateId,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<usize>>,
}

/// Compile `f` with the default state cap.
pub fn compile(f: &Formula) -> Result<Fsa, AutomatonError> {
    compile_with_cap(f, DEFAULT_STATE_CAP)
}

pub fn compile_with_cap(f: &Formula, cap: usize) -> Result<Fsa, AutomatonError> {
    let atoms = f.atoms();
    if atoms.len() > MAX_ATOMS {
        return Err(AutomatonError::TooManyAtoms {
            count: atoms.len(),
            max: MAX_ATOMS,
        });
    }
    let index = atom_index(&atoms);
    let root = Node::from_formula(f, &index)?;
    build(atoms, root, cap)
}

fn atom_index(atoms: &[Arc<Predicate>]) -> BTreeMap<String, usize> {
    atoms
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name().to_string(), i))
        .collect()
}

fn assignment_bits(n: usize, mask: u32) -> Vec<bool> {
    (0..n).map(|i| mask & (1 << i) != 0).collect()
}

fn build(atoms: Vec<Arc<Predicate>>, root: Node, cap: usize) -> Result<Fsa, AutomatonError> {
    let n = atoms.len();
    let n_masks = 1u32 << n;
    let mut ids: HashMap<Node, StateId> = HashMap::new();
    let mut nodes: Vec<Node> = Vec::new();
    let mut queue = VecDeque::new();
    ids.insert(root.clone(), 0);
    nodes.push(root);
    queue.push_back(0usize);

    // (source, target) -> minterms
    let mut transitions: BTreeMap<(StateId, StateId), Vec<u32>> = BTreeMap::new();
    while let Some(src) = queue.pop_front() {
        let node = nodes[src].clone();
        for mask in 0..n_masks {
            let next = node.progress(&assignment_bits(n, mask));
            let target = match ids.get(&next) {
                Some(&t) => t,
                None => {
                    let t = nodes.len();
                    if t >= cap {
                        return Err(AutomatonError::StateCap { cap });
                    }
                    ids.insert(next.clone(), t);
                    nodes.push(next);
                    queue.push_back(t);
                    t
                }
            };
            transitions.entry((src, target)).or_default().push(mask);
        }
    }

    let edges: Vec<Edge> = transitions
        .into_iter()
        .map(|((source, target), minterms)| Edge {
            source,
            target,
            guard: Guard::from_implicants(n, &qm::minimize(n as u32, &minterms)),
        })
        .collect();

    // Backward reachability from final states.
    let is_final: Vec<bool> = nodes.iter().map(|n| *n == Node::True).collect();
    let mut reaches = is_final.clone();
    let mut changed = true;
    while changed {
        changed = false;
        for e in &edges {
            if reaches[e.target] && !reaches[e.source] {
                reaches[e.source] = true;
                changed = true;
            }
        }
    }

    let states = nodes
        .into_iter()
        .enumerate()
        .map(|(id, residual)| FsaState {
            id,
            residual,
            is_final: is_final[id],
            is_trap: !reaches[id],
        })
        .collect::<Vec<_>>();
    let mut outgoing = vec![Vec::new(); states.len()];
    for (k, e) in edges.iter().enumerate() {
        outgoing[e.source].push(k);
    }
    Ok(Fsa {
        atoms,
        states,
        initial: 0,
        edges,
        outgoing,
    })
}

/// One-step progression of `f` under a truth assignment of its atoms.
pub fn progress(f: &Formula, v: &GuardAssignment) -> Result<Formula, AutomatonError> {
    let atoms = f.atoms();
    let index = atom_index(&atoms);
    let bits = atoms
        .iter()
        .map(|p| {
            v.get(p.name())
                .copied()
                .ok_or_else(|| AutomatonError::Unassigned(p.name().to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let node = Node::from_formula(f, &index)?;
    Ok(node.progress(&bits).to_formula(&atoms))
}

impl Fsa {
    pub fn atoms(&self) -> &[Arc<Predicate>] {
        &self.atoms
    }

    pub fn states(&self) -> &[FsaState] {
        &self.states
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn is_final(&self, q: StateId) -> bool {
        self.states.get(q).is_some_and(|s| s.is_final)
    }

    pub fn is_trap(&self, q: StateId) -> bool {
        self.states.get(q).is_some_and(|s| s.is_trap)
    }

    pub fn finals(&self) -> Vec<StateId> {
        self.states.iter().filter(|s| s.is_final).map(|s| s.id).collect()
    }

    pub fn traps(&self) -> Vec<StateId> {
        self.states.iter().filter(|s| s.is_trap).map(|s| s.id).collect()
    }

    /// The residual obligation a state stands for.
    pub fn residual(&self, q: StateId) -> Result<Formula, AutomatonError> {
        self.check(q)?;
        Ok(self.states[q].residual.to_formula(&self.atoms))
    }

    pub fn outgoing(&self, q: StateId) -> impl Iterator<Item = &Edge> {
        self.outgoing[q].iter().map(move |&k| &self.edges[k])
    }

    fn check(&self, q: StateId) -> Result<(), AutomatonError> {
        if q < self.states.len() {
            Ok(())
        } else {
            Err(AutomatonError::UnknownState(q))
        }
    }

    /// Values of every atom at `s`, in atom order.
    pub fn atom_values(&self, s: &[f64]) -> Result<Vec<f64>, AutomatonError> {
        Ok(self
            .atoms
            .iter()
            .map(|p| p.value(s))
            .collect::<Result<Vec<_>, _>>()?)
    }

    /// Advance from `q` on the MDP state `s`. When no guard is strictly
    /// positive (a boundary state) the automaton stays in `q`.
    pub fn step(&self, q: StateId, s: &[f64]) -> Result<StateId, AutomatonError> {
        self.check(q)?;
        let values = self.atom_values(s)?;
        self.step_with_values(q, &values)
    }

    pub fn step_with_values(&self, q: StateId, values: &[f64]) -> Result<StateId, AutomatonError> {
        let mut enabled = self
            .outgoing(q)
            .filter(|e| e.guard.robustness(values) > 0.0)
            .map(|e| e.target);
        match (enabled.next(), enabled.next()) {
            (None, _) => Ok(q),
            (Some(t), None) => Ok(t),
            (Some(_), Some(_)) => Err(AutomatonError::NonDeterministic {
                state: q,
                count: 2 + enabled.count(),
            }),
        }
    }

    /// Run from the initial state consuming every state of `traj`.
    pub fn run<S: AsRef<[f64]>>(&self, traj: &[S]) -> Result<StateId, AutomatonError> {
        let mut q = self.initial;
        for s in traj {
            q = self.step(q, s.as_ref())?;
        }
        Ok(q)
    }

    pub fn accepts<S: AsRef<[f64]>>(&self, traj: &[S]) -> Result<bool, AutomatonError> {
        Ok(self.is_final(self.run(traj)?))
    }

    fn progress_edges(&self, q: StateId) -> impl Iterator<Item = &Edge> {
        self.outgoing(q)
            .filter(move |e| e.target != q && !self.states[e.target].is_trap)
    }

    /// Disjunction of guards on edges leaving `q` for a different non-trap state.
    pub fn outgoing_disjunction(&self, q: StateId) -> Result<PropFormula, AutomatonError> {
        self.check(q)?;
        if self.states[q].is_final || self.states[q].is_trap {
            return Err(AutomatonError::NoProgress(q));
        }
        let f = Formula::disjunction(self.progress_edges(q).map(|e| e.guard.to_formula(&self.atoms)));
        Ok(PropFormula::new(f)?)
    }

    /// Robustness of the progress disjunction, from precomputed atom values.
    pub fn progress_robustness(&self, q: StateId, values: &[f64]) -> f64 {
        self.progress_edges(q)
            .map(|e| e.guard.robustness(values))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Edges leaving `q` for a different non-trap state.
    pub fn progress_edge_list(&self, q: StateId) -> Vec<&Edge> {
        self.progress_edges(q).collect()
    }

    /// Guards on edges leaving `q` into a trap state.
    pub fn trap_guard_dnf(&self, q: StateId) -> Option<Guard> {
        let terms: Vec<_> = self
            .outgoing(q)
            .filter(|e| self.states[e.target].is_trap)
            .flat_map(|e| e.guard.terms.iter().cloned())
            .collect();
        (!terms.is_empty()).then_some(Guard { terms })
    }

    /// Disjunction of guards on edges from `q` into any trap state.
    pub fn trap_guard(&self, q: StateId) -> Result<Option<PropFormula>, AutomatonError> {
        self.check(q)?;
        match self.trap_guard_dnf(q) {
            None => Ok(None),
            Some(g) => Ok(Some(PropFormula::new(g.to_formula(&self.atoms))?)),
        }
    }

    /// Swap in new predicates for the atoms, matched by name.
    pub fn rebind(&self, bindings: &Bindings) -> Result<Fsa, AutomatonError> {
        let atoms = self
            .atoms
            .iter()
            .map(|p| {
                bindings
                    .get(p.name())
                    .map(|b| Arc::new(b.renamed(p.name())))
                    .ok_or_else(|| LogicError::UnboundAtom {
                        name: p.name().to_string(),
                        position: 0,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Fsa {
            atoms,
            ..self.clone()
        })
    }

    pub fn guard_text(&self, edge: &Edge) -> String {
        edge.guard.render(&self.atoms)
    }
}

impl fmt::Display for Fsa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.states {
            let tag = match (s.is_final, s.is_trap) {
                (true, _) => " [final]",
                (_, true) => " [trap]",
                _ => "",
            };
            writeln!(f, "q{}{}: {}", s.id, tag, s.residual.to_formula(&self.atoms))?;
            for e in self.outgoing(s.id) {
                writeln!(f, "  -> q{} if {}", e.target, self.guard_text(e))?;
            }
        }
        Ok(())
    }
}
