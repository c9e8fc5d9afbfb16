//! Linear-quadratic mean-field game (Nash) and mean-field control (social
//! optimum) solvers for a population of optical beam-tracking terminals.

pub mod cli;
pub mod config;
pub mod costs;
pub mod error;
pub mod fbsolver;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod simulator;
pub mod sparse;

pub use error::{Error, Result};
pub use fbsolver::{
    solve_mean_field, FixedPointScheme, MeanFieldPair, MeanFieldSolution, Method, SolverOptions,
    Variant,
};
pub use model::{MfProblem, TimeGrid};
