use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("line {line}: undeclared predicate `{name}`")]
    UndeclaredPredicate { line: usize, name: String },

    #[error("line {line}: predicate `{name}` used with {found} arguments, declared with {expected}")]
    ArityMismatch { line: usize, name: String, expected: usize, found: usize },

    #[error("line {line}: formula has {count} distinct atoms (at most 3 supported)")]
    TooManyAtoms { line: usize, count: usize },

    #[error("domain size must be at least 1")]
    DomainTooSmall,

    #[error("ground elements {first} and {second} share an orbit but carry different potentials")]
    TyingViolation { first: String, second: String },

    #[error("node orbit {0} is not an exchangeable cluster")]
    NotExchangeable(usize),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex did not terminate within {0} pivots")]
    IterationLimit(usize),

    #[error("ground graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },

    #[error("state space of {states} configurations exceeds the limit of {limit}")]
    TooLarge { states: u128, limit: u128 },

    #[error("{0}")]
    Invalid(String),
}
