use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Fsa, StateId};
use crate::logic::{FormulaAst, Predicate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDocument {
    pub id: StateId,
    pub residual: String,
    #[serde(rename = "final")]
    pub is_final: bool,
    #[serde(rename = "trap")]
    pub is_trap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDocument {
    pub source: StateId,
    pub target: StateId,
    pub guard_text: String,
    pub guard: FormulaAst,
}

/// Machine-readable automaton export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsaDocument {
    pub atoms: Vec<Predicate>,
    pub initial: StateId,
    pub states: Vec<StateDocument>,
    pub edges: Vec<EdgeDocument>,
}

impl Fsa {
    pub fn to_document(&self) -> FsaDocument {
        FsaDocument {
            atoms: self.atoms.iter().map(|p| (**p).clone()).collect(),
            initial: self.initial,
            states: self
                .states
                .iter()
                .map(|s| StateDocument {
                    id: s.id,
                    residual: s.residual.to_formula(&self.atoms).to_string(),
                    is_final: s.is_final,
                    is_trap: s.is_trap,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDocument {
                    source: e.source,
                    target: e.target,
                    guard_text: self.guard_text(e),
                    guard: e.guard.to_formula(&self.atoms).to_ast(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("automaton document serializes")
    }

    /// Graphviz rendering: finals double-circled, traps shaded.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        out.push_str("digraph fsa {\n");
        out.push_str("  rankdir=LR;\n");
        out.push_str("  node [shape=circle];\n");
        out.push_str("  __start [shape=point];\n");
        let _ = writeln!(out, "  __start -> q{};", self.initial);
        for s in &self.states {
            let residual = escape(&s.residual.to_formula(&self.atoms).to_string());
            let style = if s.is_final {
                ", shape=doublecircle"
            } else if s.is_trap {
                ", style=filled, fillcolor=gray80"
            } else {
                ""
            };
            let _ = writeln!(out, "  q{} [label=\"q{}\", tooltip=\"{}\"{}];", s.id, s.id, residual, style);
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  q{} -> q{} [label=\"{}\"];",
                e.source,
                e.target,
                escape(&self.guard_text(e))
            );
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
