//! Templated (MLN-style) models and their ground pairwise factor graphs.
//!
//! A [`TemplatedModel`] is a list of weighted first-order formulas over unary
//! and binary predicates. [`ground`] instantiates it over a domain of `n`
//! constants and compiles every grounding into an overcomplete pairwise MRF:
//! one-atom groundings become unary potentials, two-atom groundings become
//! edge potentials and three-atom groundings become an auxiliary 8-valued node
//! tied to its atoms by structural-zero consistency edges.

mod ground;
mod parse;

pub use ground::{ground, score_state, EdgeOrigin, GroundEdge, GroundNode, NodeTerm, PairwiseGroundModel, SymmetrySource};
pub use parse::parse_model;

/// A predicate symbol with its arity (1 or 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub name: String,
    pub arity: usize,
}

/// Formula weight: a literal or a multiple of the free symbol `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Fixed(f64),
    /// `coefficient * W`
    Symbolic(f64),
}

impl Weight {
    pub fn resolve(self, w: f64) -> f64 {
        match self {
            Weight::Fixed(v) => v,
            Weight::Symbolic(c) => c * w,
        }
    }
}

/// An atom inside a formula: predicate index plus logical-variable indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AtomTemplate {
    pub predicate: usize,
    pub args: Vec<usize>,
}

/// Boolean structure over the formula's atom table.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Atom(usize),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Implies(Box<Expr>, Box<Expr>),
    Iff(Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Evaluates with `truth[i]` giving the value of atom `i`.
    pub fn eval(&self, truth: &dyn Fn(usize) -> bool) -> bool {
        match self {
            Expr::Atom(i) => truth(*i),
            Expr::Not(e) => !e.eval(truth),
            Expr::And(es) => es.iter().all(|e| e.eval(truth)),
            Expr::Or(es) => es.iter().any(|e| e.eval(truth)),
            Expr::Implies(a, b) => !a.eval(truth) || b.eval(truth),
            Expr::Iff(a, b) => a.eval(truth) == b.eval(truth),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFormula {
    pub weight: Weight,
    /// Distinct atoms in order of first occurrence.
    pub atoms: Vec<AtomTemplate>,
    pub expr: Expr,
    /// Logical variable names, indexed by first occurrence.
    pub variables: Vec<String>,
    /// Pairs of logical variables that must bind distinct constants.
    pub distinct: Vec<(usize, usize)>,
    /// Source line, for diagnostics.
    pub line: usize,
}

impl WeightedFormula {
    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    /// Whether a binding of logical variables to constants passes the guards.
    pub fn admits(&self, binding: &[u32]) -> bool {
        self.distinct.iter().all(|&(a, b)| binding[a] != binding[b])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplatedModel {
    pub predicates: Vec<Predicate>,
    pub formulas: Vec<WeightedFormula>,
}

impl TemplatedModel {
    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|p| p.name == name)
    }

    /// Whether any formula weight mentions `W`.
    pub fn is_parametric(&self) -> bool {
        self.formulas.iter().any(|f| matches!(f.weight, Weight::Symbolic(_)))
    }
}
