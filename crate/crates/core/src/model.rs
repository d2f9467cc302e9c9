//! Core domain types shared by the solvers and the backtest engine.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("covariance matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("covariance matrix is not positive semidefinite (min eigenvalue {min_eig:.6e}, max {max_eig:.6e})")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("asset {0} has zero effective curvature; coordinate update undefined")]
    DegenerateAsset(usize),
    #[error("row {0} of the returns panel has no observed entries; cannot impute")]
    FullyMissingRow(usize),
    #[error("window [{start}, {start}+{len}) out of bounds for panel with {rows} rows")]
    WindowOutOfBounds {
        start: usize,
        len: usize,
        rows: usize,
    },
    #[error("missing values inside covariance window at row {0}; impute first")]
    MissingInWindow(usize),
    #[error("group {0}: diagonal covariance block is not positive definite")]
    IllConditionedGroup(usize),
    #[error("matrix is not positive definite (min eigenvalue {min_eig:.6e} <= floor {floor:.6e})")]
    NotPositiveDefinite { min_eig: f64, floor: f64 },
    #[error("linear system is singular: {0}")]
    SingularSystem(String),
    #[error("active-set iteration exceeded {0} steps without termination")]
    CyclingGuard(usize),
    #[error("problem size {p} exceeds the oracle bound {max_p}")]
    OracleBound { p: usize, max_p: usize },
    #[error("portfolio wiped out: 1 + portfolio return = {0} <= 0")]
    PortfolioWipeout(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report deserialization: {0}")]
    ReportFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;

// ---------------------------------------------------------------------------
// Returns panel
// ---------------------------------------------------------------------------

/// Dated matrix of simple periodic returns with missing-value markers.
///
/// Returns are dimensionless fractions (0.012 = 1.2%), one row per period,
/// one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    dates: Vec<String>,
    asset_ids: Vec<String>,
    returns: DMatrix<f64>,
    missing: Vec<bool>, // row-major T x p
}

impl ReturnsPanel {
    /// Builds a panel, validating the invariants: dates strictly increasing,
    /// T >= 1, p >= 2, and every observed return finite and > -1.
    pub fn new(
        dates: Vec<String>,
        asset_ids: Vec<String>,
        returns: DMatrix<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        let (t, p) = returns.shape();
        if t < 1 {
            return Err(Error::InvalidInput(
                "panel needs at least one period".into(),
            ));
        }
        if p < 2 {
            return Err(Error::InvalidInput(
                "panel needs at least two assets".into(),
            ));
        }
        if dates.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{} dates for {} rows",
                dates.len(),
                t
            )));
        }
        if asset_ids.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} asset ids for {} columns",
                asset_ids.len(),
                p
            )));
        }
        if missing.len() != t * p {
            return Err(Error::DimensionMismatch(format!(
                "missing mask has {} entries, expected {}",
                missing.len(),
                t * p
            )));
        }
        for win in dates.windows(2) {
            if win[1] <= win[0] {
                return Err(Error::InvalidInput(format!(
                    "dates not strictly increasing at '{}' -> '{}'",
                    win[0], win[1]
                )));
            }
        }
        for row in 0..t {
            for col in 0..p {
                if missing[row * p + col] {
                    continue;
                }
                let r = returns[(row, col)];
                if !r.is_finite() || r <= -1.0 {
                    return Err(Error::InvalidInput(format!(
                        "return at ({}, {}) is {}; observed returns must be finite and > -1",
                        row, col, r
                    )));
                }
            }
        }
        Ok(Self {
            dates,
            asset_ids,
            returns,
            missing,
        })
    }

    /// Convenience constructor for a fully observed panel.
    pub fn fully_observed(
        dates: Vec<String>,
        asset_ids: Vec<String>,
        returns: DMatrix<f64>,
    ) -> Result<Self> {
        let n = returns.nrows() * returns.ncols();
        Self::new(dates, asset_ids, returns, vec![false; n])
    }

    pub fn periods(&self) -> usize {
        self.returns.nrows()
    }

    pub fn assets(&self) -> usize {
        self.returns.ncols()
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[row * self.assets() + col]
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    /// Returns row `t` as a weight-compatible vector.
    pub fn row(&self, t: usize) -> DVector<f64> {
        self.returns.row(t).transpose()
    }
}

// ---------------------------------------------------------------------------
// Covariance matrix
// ---------------------------------------------------------------------------

/// Symmetric positive-semidefinite covariance matrix of asset returns.
///
/// Stored as the full symmetric matrix so coordinate sweeps can scan rows
/// (equivalently columns) contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    sigma: DMatrix<f64>,
    p: usize,
}

/// Relative tolerance for accepting slightly asymmetric user input.
const SYMMETRY_RTOL: f64 = 1e-8;
/// PSD acceptance: smallest eigenvalue >= -PSD_RTOL * largest eigenvalue.
const PSD_RTOL: f64 = 1e-10;

impl CovarianceMatrix {
    /// Builds a covariance matrix from user input, checking symmetry, the
    /// nonnegative diagonal, and positive semidefiniteness within tolerance.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let p = Self::check_shape(&m)?;
        let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let mut max_asym = 0.0f64;
        for i in 0..p {
            for j in (i + 1)..p {
                max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if max_asym > SYMMETRY_RTOL * scale.max(1e-300) {
            return Err(Error::NotSymmetric(max_asym));
        }
        let sym = Self::symmetrize(m);
        Self::check_diagonal(&sym)?;
        let eigs = sym.clone().symmetric_eigenvalues();
        let min_eig = eigs.min();
        let max_eig = eigs.max();
        if min_eig < -PSD_RTOL * max_eig.abs() {
            return Err(Error::NotPsd { min_eig, max_eig });
        }
        Ok(Self { sigma: sym, p })
    }

    /// Builds from a matrix that is PSD by construction (sample covariance);
    /// the eigenvalue check is skipped. Symmetry and the diagonal are still
    /// enforced exactly.
    pub(crate) fn from_sample(m: DMatrix<f64>) -> Result<Self> {
        let p = Self::check_shape(&m)?;
        let sym = Self::symmetrize(m);
        Self::check_diagonal(&sym)?;
        Ok(Self { sigma: sym, p })
    }

    fn check_shape(m: &DMatrix<f64>) -> Result<usize> {
        let (r, c) = m.shape();
        if r != c {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}",
                r, c
            )));
        }
        if r < 2 {
            return Err(Error::InvalidInput("covariance needs p >= 2".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "covariance has non-finite entries".into(),
            ));
        }
        Ok(r)
    }

    fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
        let mut s = m;
        let p = s.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    fn check_diagonal(m: &DMatrix<f64>) -> Result<()> {
        for i in 0..m.nrows() {
            if m[(i, i)] < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "negative variance {} for asset {}",
                    m[(i, i)],
                    i
                )));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Variance of asset `i` (diagonal entry).
    pub fn variance(&self, i: usize) -> f64 {
        self.sigma[(i, i)]
    }

    /// Row `i` of Σ as a contiguous slice (valid because Σ is symmetric and
    /// stored column-major).
    pub fn row_slice(&self, i: usize) -> &[f64] {
        let p = self.p;
        &self.sigma.as_slice()[i * p..(i + 1) * p]
    }

    /// Σ w.
    pub fn mul_vec(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.sigma * w
    }

    pub fn trace(&self) -> f64 {
        (0..self.p).map(|i| self.sigma[(i, i)]).sum()
    }

    pub fn max_variance(&self) -> f64 {
        (0..self.p)
            .map(|i| self.variance(i))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_variance(&self) -> f64 {
        (0..self.p)
            .map(|i| self.variance(i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Scales every entry by `c` (c >= 0), preserving symmetry.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidInput(format!("scale factor {} invalid", c)));
        }
        Ok(Self {
            sigma: &self.sigma * c,
            p: self.p,
        })
    }
}

// ---------------------------------------------------------------------------
// Group structure
// ---------------------------------------------------------------------------

/// Partition of the asset index set into disjoint nonempty groups.
///
/// Overlapping groups are rejected: block coordinate descent is only valid
/// when the blocks are separable.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    groups: Vec<Vec<usize>>,
    p: usize,
}

impl GroupStructure {
    /// Builds a grouping over assets `0..p`, validating that the groups are
    /// nonempty, disjoint, and cover every index exactly once.
    pub fn new(groups: Vec<Vec<usize>>, p: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidInput("grouping has no groups".into()));
        }
        let mut seen = vec![false; p];
        let mut covered = 0usize;
        for (l, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidInput(format!("group {} is empty", l)));
            }
            for &i in g {
                if i >= p {
                    return Err(Error::InvalidInput(format!(
                        "group {} references asset {} but p = {}",
                        l, i, p
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidInput(format!(
                        "asset {} appears in more than one group",
                        i
                    )));
                }
                seen[i] = true;
                covered += 1;
            }
        }
        if covered != p {
            return Err(Error::InvalidInput(format!(
                "groups cover {} of {} assets",
                covered, p
            )));
        }
        Ok(Self { groups, p })
    }

    /// One singleton group per asset.
    pub fn singletons(p: usize) -> Self {
        Self {
            groups: (0..p).map(|i| vec![i]).collect(),
            p,
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn group(&self, l: usize) -> &[usize] {
        &self.groups[l]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

// ---------------------------------------------------------------------------
// Penalty configuration
// ---------------------------------------------------------------------------

/// Penalty family and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyConfig {
    /// λα‖w‖₁ + λ(1−α)‖w‖₂²
    ElasticNet { lambda: f64, alpha: f64 },
    /// −τ w'μ + λα‖w‖₁ + λ(1−α)‖w‖₂² (mean-variance objective)
    MeanVariance {
        lambda: f64,
        alpha: f64,
        tau: f64,
        mu: DVector<f64>,
    },
    /// λ Σ ηᵢ|wᵢ|
    WeightedL1 { lambda: f64, eta: DVector<f64> },
    /// λ Σ (|wᵢ| if |wᵢ| < δ else (wᵢ² + δ²)/(2δ))
    Berhu { lambda: f64, delta: f64 },
    /// λ₁ Σ_l √(w_l' A_ll w_l)
    AdaptiveGroup {
        lambda1: f64,
        grouping: GroupStructure,
    },
}

impl PenaltyConfig {
    /// Validates parameter ranges and dimension agreement with `p` assets.
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            PenaltyConfig::ElasticNet { lambda, alpha } => {
                check_lambda(*lambda)?;
                check_alpha(*alpha)
            }
            PenaltyConfig::MeanVariance {
                lambda,
                alpha,
                tau,
                mu,
            } => {
                check_lambda(*lambda)?;
                check_alpha(*alpha)?;
                if !(tau.is_finite() && *tau >= 0.0) {
                    return Err(Error::InvalidInput(format!("tau = {} must be >= 0", tau)));
                }
                if mu.len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "mu has {} entries for {} assets",
                        mu.len(),
                        p
                    )));
                }
                if mu.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("mu has non-finite entries".into()));
                }
                Ok(())
            }
            PenaltyConfig::WeightedL1 { lambda, eta } => {
                check_lambda(*lambda)?;
                if eta.len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "eta has {} entries for {} assets",
                        eta.len(),
                        p
                    )));
                }
                if eta.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidInput(
                        "eta entries must be finite and >= 0".into(),
                    ));
                }
                Ok(())
            }
            PenaltyConfig::Berhu { lambda, delta } => {
                check_lambda(*lambda)?;
                if !(delta.is_finite() && *delta > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "delta = {} must be > 0",
                        delta
                    )));
                }
                Ok(())
            }
            PenaltyConfig::AdaptiveGroup { lambda1, grouping } => {
                check_lambda(*lambda1)?;
                if grouping.p() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "grouping covers {} assets, covariance has {}",
                        grouping.p(),
                        p
                    )));
                }
                Ok(())
            }
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda = {} must be >= 0",
            lambda
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && (0.0..=1.0).contains(&alpha)) {
        return Err(Error::InvalidInput(format!(
            "alpha = {} must lie in [0, 1]",
            alpha
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Solver options and solution
// ---------------------------------------------------------------------------

/// Iteration controls shared by all solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Maximum number of full coordinate (or block) sweeps.
    pub max_sweeps: usize,
    /// Convergence: max absolute weight change per sweep.
    pub coord_tol: f64,
    /// Budget feasibility |Σw − 1| required at convergence.
    pub budget_tol: f64,
    /// Stationarity residual accepted at convergence, scaled by (1 + max σᵢ²).
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 10_000,
            coord_tol: 1e-9,
            budget_tol: 1e-8,
            kkt_tol: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps < 1 {
            return Err(Error::InvalidInput("max_sweeps must be >= 1".into()));
        }
        for (name, v) in [
            ("coord_tol", self.coord_tol),
            ("budget_tol", self.budget_tol),
            ("kkt_tol", self.kkt_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{} = {} must be > 0", name, v)));
            }
        }
        Ok(())
    }
}

/// Converged (or best-effort) solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Portfolio weights; sums to 1 within `budget_tol` when converged.
    pub weights: DVector<f64>,
    /// Lagrange multiplier of the budget constraint.
    pub gamma: f64,
    /// Sweeps performed (0 for direct solves).
    pub iterations: usize,
    pub converged: bool,
    /// Final objective value (including the penalty term).
    pub objective: f64,
    /// Maximum stationarity violation, as reported by the matching
    /// `kkt_residual` operation.
    pub kkt_residual: f64,
}

// ---------------------------------------------------------------------------
// Objective evaluation
// ---------------------------------------------------------------------------

/// Evaluates w'Σw plus the configured penalty term at `w`.
///
/// For `MeanVariance` the expected-return term −τw'μ is included; for
/// `AdaptiveGroup` the penalty is λ₁ Σ_l √(w_l' A_ll w_l).
pub fn objective_value(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    w: &DVector<f64>,
) -> Result<f64> {
    let p = sigma.p();
    if w.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "weights have {} entries for {} assets",
            w.len(),
            p
        )));
    }
    penalty.validate(p)?;
    let quad = w.dot(&sigma.mul_vec(w));
    let pen = match penalty {
        PenaltyConfig::ElasticNet { lambda, alpha } => {
            lambda * alpha * l1_norm(w) + lambda * (1.0 - alpha) * w.norm_squared()
        }
        PenaltyConfig::MeanVariance {
            lambda,
            alpha,
            tau,
            mu,
        } => {
            -tau * w.dot(mu)
                + lambda * alpha * l1_norm(w)
                + lambda * (1.0 - alpha) * w.norm_squared()
        }
        PenaltyConfig::WeightedL1 { lambda, eta } => {
            lambda
                * w.iter()
                    .zip(eta.iter())
                    .map(|(wi, ei)| ei * wi.abs())
                    .sum::<f64>()
        }
        PenaltyConfig::Berhu { lambda, delta } => {
            crate::berhu_solver::berhu_penalty(w, *lambda, *delta)
        }
        PenaltyConfig::AdaptiveGroup { lambda1, grouping } => {
            let mut sum = 0.0;
            for g in grouping.groups() {
                let mut q = 0.0;
                for &i in g {
                    for &j in g {
                        q += w[i] * sigma.matrix()[(i, j)] * w[j];
                    }
                }
                sum += q.max(0.0).sqrt();
            }
            lambda1 * sum
        }
    };
    Ok(quad + pen)
}

fn l1_norm(w: &DVector<f64>) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}
