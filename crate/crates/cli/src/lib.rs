//! Command-line front end for the sparse minimum-variance portfolio solvers:
//! data ingestion, one-shot solves, (λ, α/δ) grid sweeps, and rolling-window
//! backtests.

use std::fmt;

pub mod commands;
pub mod config;
pub mod data;

/// Errors carrying the process exit code contract:
/// 1 usage, 2 data, 3 solver non-convergence (partial outputs written).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {}", m),
            CliError::Data(m) => write!(f, "data: {}", m),
            CliError::Solver(m) => write!(f, "solver: {}", m),
        }
    }
}

impl std::error::Error for CliError {}
