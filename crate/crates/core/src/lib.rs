//! Galerkin simulation of the stochastic generalized porous media equation
//! with reflection at zero, via penalization, on the unit interval.

pub mod basis;
pub mod model;
pub mod noise;
pub mod solver;
pub mod harness;
pub mod config;
pub mod output;
pub mod cli;

use thiserror::Error;

/// Top-level error of the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Output(#[from] output::OutputError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}
