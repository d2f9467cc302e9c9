//! Sparse minimum-variance portfolio construction by coordinate-wise descent.
//!
//! The portfolio problem solved throughout is
//!
//! ```text
//!     minimize    w' Σ w + penalty(w)
//!     subject to  w' 1 = 1
//! ```
//!
//! where `Σ` is a covariance matrix of asset returns and the penalty is one of
//! elastic net, weighted l1, berhu, or a covariance-weighted group norm. The
//! budget constraint is handled through its Lagrange multiplier `γ`, which is
//! updated in closed form (or by scalar search, for the group penalty) between
//! coordinate sweeps.
//!
//! Modules:
//! - [`model`] — shared domain types (panels, covariances, penalties, solutions).
//! - [`covariance`] — sample covariance estimation and the missing-data rule.
//! - [`cd_solver`] — coordinate descent for elastic-net / mean-variance / weighted-l1.
//! - [`berhu_solver`] — coordinate descent for the berhu (reverse Huber) penalty.
//! - [`group_solver`] — block coordinate descent for the adaptive group penalty.
//! - [`backtest`] — rolling-window rebalancing engine and evaluation metrics.
//! - [`oracle`] — independent small-scale verification solvers.

pub mod backtest;
pub mod berhu_solver;
pub mod cd_solver;
pub mod covariance;
pub mod group_solver;
mod linalg;
pub mod model;
pub mod oracle;
pub mod test_support;

pub use model::{
    CovarianceMatrix, Error, GroupStructure, PenaltyConfig, Result, ReturnsPanel, Solution,
    SolverOptions,
};
