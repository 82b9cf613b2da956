use thiserror::Error;

/// Errors raised by the measure computations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("symbol index {0} is not in the alphabet")]
    UnknownSymbol(usize),

    #[error("unknown symbol name `{0}`")]
    UnknownSymbolName(String),

    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("cylinder syntax error: {0}")]
    CylinderSyntax(String),

    #[error("cylinder set parts overlap: {0} and {1}")]
    Overlap(String, String),

    #[error("point {0} lies outside every partition cell")]
    OutsideCells(String),

    #[error("map of edge `{edge}` evaluated outside its source cell at {point}")]
    OutOfCell { edge: String, point: String },

    #[error("atom budget of {budget} exceeded ({atoms} atoms)")]
    AtomBudget { budget: usize, atoms: usize },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("unsupported for this system: {0}")]
    Unsupported(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("node budget of {budget} exceeded; best upper bound found {best_bound:?}")]
    NodeBudget { budget: u64, best_bound: Option<f64> },

    #[error("oracle refused: {0}")]
    OracleGuard(String),

    #[error("initial distribution is not stationary (|U*nu - nu|_1 = {0:e}); use the stationary distribution")]
    NotStationary(f64),

    #[error("atom at {0} lies on the boundary of the segment")]
    BoundaryAtom(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),
}

pub type Result<T> = std::result::Result<T, Error>;
