use thiserror::Error;

/// Errors produced anywhere in the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("step size must be positive, got {0}")]
    Step(f64),
    #[error("root finding failed: {0}")]
    Root(String),
    #[error("subproblem has no minimizer: {0}")]
    Unbounded(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Arg(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("geometry {geometry} cannot be paired with region {region}")]
    Pairing { geometry: String, region: String },
    #[error("infeasible region: {0}")]
    Infeasible(String),
    #[error("not a descent direction: <grad, d> = {0}")]
    Descent(f64),
    #[error("line search exceeded {0} backtracks")]
    LineSearch(usize),
    #[error("rank deficient design: {0}")]
    Rank(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: expected length {expected}, got {got}")))
    }
}
