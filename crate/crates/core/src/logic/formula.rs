use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{LogicError, Predicate};

/// Atom name to predicate.
pub type Bindings = BTreeMap<String, Predicate>;

/// scTLTL abstract syntax tree. There is no Always node.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    False,
    Atom(Arc<Predicate>),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Eventually(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(p: Predicate) -> Self {
        Formula::Atom(Arc::new(p))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn eventually(f: Formula) -> Self {
        Formula::Eventually(Box::new(f))
    }

    pub fn until(a: Formula, b: Formula) -> Self {
        Formula::Until(Box::new(a), Box::new(b))
    }

    /// Left fold with `&`; `True` for an empty iterator.
    pub fn conjunction(parts: impl IntoIterator<Item = Formula>) -> Self {
        parts
            .into_iter()
            .reduce(Formula::and)
            .unwrap_or(Formula::True)
    }

    /// Left fold with `|`; `False` for an empty iterator.
    pub fn disjunction(parts: impl IntoIterator<Item = Formula>) -> Self {
        parts
            .into_iter()
            .reduce(Formula::or)
            .unwrap_or(Formula::False)
    }

    pub fn is_temporal_free(&self) -> bool {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) => true,
            Formula::Not(a) => a.is_temporal_free(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.is_temporal_free() && b.is_temporal_free()
            }
            Formula::Eventually(_) | Formula::Until(_, _) => false,
        }
    }

    /// Distinct atoms sorted by name.
    pub fn atoms(&self) -> Vec<Arc<Predicate>> {
        let mut out = BTreeMap::new();
        self.collect_atoms(&mut out);
        out.into_values().collect()
    }

    fn collect_atoms(&self, out: &mut BTreeMap<String, Arc<Predicate>>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Atom(p) => {
                out.entry(p.name().to_string()).or_insert_with(|| p.clone());
            }
            Formula::Not(a) | Formula::Eventually(a) => a.collect_atoms(out),
            Formula::And(a, b)
            | Formula::Or(a, b)
            | Formula::Implies(a, b)
            | Formula::Until(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    /// Replace every atom by the predicate bound to its name.
    pub fn rebind(&self, bindings: &Bindings) -> Result<Formula, LogicError> {
        let cache: BTreeMap<&str, Arc<Predicate>> = bindings
            .iter()
            .map(|(k, v)| (k.as_str(), Arc::new(v.renamed(k.clone()))))
            .collect();
        self.rebind_with(&cache)
    }

    fn rebind_with(&self, cache: &BTreeMap<&str, Arc<Predicate>>) -> Result<Formula, LogicError> {
        let rb = |f: &Formula| f.rebind_with(cache).map(Box::new);
        Ok(match self {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Atom(p) => Formula::Atom(
                cache
                    .get(p.name())
                    .cloned()
                    .ok_or_else(|| LogicError::UnboundAtom {
                        name: p.name().to_string(),
                        position: 0,
                    })?,
            ),
            Formula::Not(a) => Formula::Not(rb(a)?),
            Formula::Eventually(a) => Formula::Eventually(rb(a)?),
            Formula::And(a, b) => Formula::And(rb(a)?, rb(b)?),
            Formula::Or(a, b) => Formula::Or(rb(a)?, rb(b)?),
            Formula::Implies(a, b) => Formula::Implies(rb(a)?, rb(b)?),
            Formula::Until(a, b) => Formula::Until(rb(a)?, rb(b)?),
        })
    }

    /// Binding strength used by the printer and the parser.
    fn precedence(&self) -> u8 {
        match self {
            Formula::Implies(..) => 1,
            Formula::Or(..) => 2,
            Formula::And(..) => 3,
            Formula::Until(..) => 4,
            Formula::Not(_) | Formula::Eventually(_) => 5,
            Formula::True | Formula::False | Formula::Atom(_) => 6,
        }
    }

    /// Serializable view with atoms referenced by name.
    pub fn to_ast(&self) -> FormulaAst {
        let b = |f: &Formula| Box::new(f.to_ast());
        match self {
            Formula::True => FormulaAst::True,
            Formula::False => FormulaAst::False,
            Formula::Atom(p) => FormulaAst::Atom {
                name: p.name().to_string(),
            },
            Formula::Not(a) => FormulaAst::Not { arg: b(a) },
            Formula::Eventually(a) => FormulaAst::Eventually { arg: b(a) },
            Formula::And(l, r) => FormulaAst::And { lhs: b(l), rhs: b(r) },
            Formula::Or(l, r) => FormulaAst::Or { lhs: b(l), rhs: b(r) },
            Formula::Implies(l, r) => FormulaAst::Implies { lhs: b(l), rhs: b(r) },
            Formula::Until(l, r) => FormulaAst::Until { lhs: b(l), rhs: b(r) },
        }
    }
}

/// JSON shape of a formula; atoms are names resolved against bindings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FormulaAst {
    True,
    False,
    Atom { name: String },
    Not { arg: Box<FormulaAst> },
    And { lhs: Box<FormulaAst>, rhs: Box<FormulaAst> },
    Or { lhs: Box<FormulaAst>, rhs: Box<FormulaAst> },
    Implies { lhs: Box<FormulaAst>, rhs: Box<FormulaAst> },
    Eventually { arg: Box<FormulaAst> },
    Until { lhs: Box<FormulaAst>, rhs: Box<FormulaAst> },
}

impl FormulaAst {
    pub fn resolve(&self, bindings: &Bindings) -> Result<Formula, LogicError> {
        let r = |f: &FormulaAst| f.resolve(bindings).map(Box::new);
        Ok(match self {
            FormulaAst::True => Formula::True,
            FormulaAst::False => Formula::False,
            FormulaAst::Atom { name } => {
                let p = bindings.get(name).ok_or_else(|| LogicError::UnboundAtom {
                    name: name.clone(),
                    position: 0,
                })?;
                Formula::atom(p.renamed(name.clone()))
            }
            FormulaAst::Not { arg } => Formula::Not(r(arg)?),
            FormulaAst::Eventually { arg } => Formula::Eventually(r(arg)?),
            FormulaAst::And { lhs, rhs } => Formula::And(r(lhs)?, r(rhs)?),
            FormulaAst::Or { lhs, rhs } => Formula::Or(r(lhs)?, r(rhs)?),
            FormulaAst::Implies { lhs, rhs } => Formula::Implies(r(lhs)?, r(rhs)?),
            FormulaAst::Until { lhs, rhs } => Formula::Until(r(lhs)?, r(rhs)?),
        })
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |f: &mut fmt::Formatter<'_>, child: &Formula, parens: bool| {
            if parens {
                write!(f, "({child})")
            } else {
                write!(f, "{child}")
            }
        };
        let prec = self.precedence();
        match self {
            Formula::True => f.write_str("true"),
            Formula::False => f.write_str("false"),
            Formula::Atom(p) => f.write_str(p.name()),
            Formula::Not(a) => {
                f.write_str("!")?;
                wrap(f, a, a.precedence() < prec)
            }
            Formula::Eventually(a) => {
                f.write_str("F ")?;
                wrap(f, a, a.precedence() < prec)
            }
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Implies(l, r) | Formula::Until(l, r) => {
                let op = match self {
                    Formula::And(..) => "&",
                    Formula::Or(..) => "|",
                    Formula::Implies(..) => "->",
                    _ => "U",
                };
                // Left-associative: a right child of equal precedence needs parentheses.
                wrap(f, l, l.precedence() < prec)?;
                write!(f, " {op} ")?;
                wrap(f, r, r.precedence() <= prec)
            }
        }
    }
}

/// A temporal-operator-free formula, used for automaton guards.
#[derive(Debug, Clone, PartialEq)]
pub struct PropFormula(Formula);

impl PropFormula {
    pub fn new(f: Formula) -> Result<Self, LogicError> {
        if f.is_temporal_free() {
            Ok(Self(f))
        } else {
            Err(LogicError::NotPropositional(f.to_string()))
        }
    }

    pub fn formula(&self) -> &Formula {
        &self.0
    }

    pub fn into_formula(self) -> Formula {
        self.0
    }
}

impl TryFrom<Formula> for PropFormula {
    type Error = LogicError;

    fn try_from(f: Formula) -> Result<Self, Self::Error> {
        Self::new(f)
    }
}

impl fmt::Display for PropFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}
