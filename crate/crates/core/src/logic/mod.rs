//! scTLTL syntax, parsing, robustness semantics and propositional normal forms.

mod formula;
pub mod normal;
mod parse;
mod predicate;
mod robustness;

pub use formula::{Bindings, Formula, FormulaAst, PropFormula};
pub use normal::{to_cnf, to_nnf, CnfFormula, Literal};
pub use parse::parse_formula;
pub use predicate::{Predicate, PredicateKind};
pub use robustness::{robustness, state_robustness, suffix_robustness};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogicError {
    #[error("syntax error at {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unbound atom '{name}' at {position}")]
    UnboundAtom { name: String, position: usize },
    #[error("Always operator at {position} is not allowed in scTLTL")]
    AlwaysNotAllowed { position: usize },
    #[error("negated temporal operator in '{0}' implies Always, not allowed in scTLTL")]
    NegatedTemporal(String),
    #[error("formula '{0}' contains temporal operators")]
    NotPropositional(String),
    #[error("invalid predicate '{name}': {reason}")]
    InvalidPredicate { name: String, reason: String },
    #[error("predicate '{name}' expects a {expected}-dimensional state, got {got}")]
    DimensionMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("robustness of an empty trajectory")]
    EmptyTrajectory,
}
