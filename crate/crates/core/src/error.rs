use thiserror::Error;

use crate::fbsolver::MeanFieldPair;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{name} is not positive definite")]
    NotPositiveDefinite { name: &'static str },

    #[error("{name} is asymmetric (max |M - Mᵀ| = {asymmetry:e})")]
    AsymmetricWeight { name: &'static str, asymmetry: f64 },

    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    #[error("bad time grid: {0}")]
    BadGrid(String),

    #[error("{what} blew up at grid index {index}")]
    BlowUp { what: &'static str, index: usize },

    #[error("linear system is singular to working precision (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("no convergence after {iterations} iterations (last difference {last_difference:e})")]
    NoConvergence {
        iterations: usize,
        last_difference: f64,
        best: Box<MeanFieldPair>,
    },

    #[error("at least 2 agents are required, got {0}")]
    InsufficientAgents(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("price of anarchy needs a positive social cost, got {0:e}")]
    NonPositiveDenominator(f64),

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch(_)
            | Error::NotPositiveDefinite { .. }
            | Error::AsymmetricWeight { .. }
            | Error::InvalidProblem(_)
            | Error::BadGrid(_)
            | Error::InvalidOption(_)
            | Error::InsufficientAgents(_)
            | Error::Config { .. } => 2,
            _ => 3,
        }
    }
}
