//! Coordinate-wise descent for the elastic-net penalized minimum-variance
//! portfolio, with the mean-variance and weighted-l1 variants.
//!
//! The Lagrangian of the budget constraint is minimized one coordinate at a
//! time. With `z_i = 2 Σ_{j≠i} w_j σ_ij`, the elastic-net coordinate update is
//!
//! ```text
//!     w_i <- ST(γ - z_i, λα) / (2(σ_i² + λ(1-α)))
//! ```
//!
//! and after each full sweep the multiplier γ is re-solved in closed form so
//! that re-evaluating the active coordinates at the new γ restores the budget
//! `w' 1 = 1` exactly (signs unchanged).
//!
//! The mean-variance variant replaces `z_i` by `z_i - τμ_i` (the form obtained
//! by differentiating the stated objective); the weighted-l1 variant uses the
//! per-asset threshold `λη_i` with curvature `2σ_i²`.

use nalgebra::DVector;

use crate::linalg::solve_budget_qp;
use crate::model::{
    objective_value, CovarianceMatrix, Error, PenaltyConfig, Result, Solution, SolverOptions,
};

/// Soft thresholding: `sign(x) * max(|x| - y, 0)` for `y >= 0`.
pub fn soft_threshold(x: f64, y: f64) -> f64 {
    debug_assert!(y >= 0.0);
    if x > y {
        x - y
    } else if x < -y {
        x + y
    } else {
        0.0
    }
}

/// Iteration state of a coordinate-descent solve.
///
/// The cache `z_i = 2 Σ_{j≠i} w_j σ_ij` is maintained incrementally: when a
/// coordinate moves by Δ, every other `z_j` changes by `2 σ_ij Δ`.
#[derive(Debug, Clone)]
pub struct CdState {
    w: DVector<f64>,
    gamma: f64,
    z: DVector<f64>,
    sweep: usize,
}

impl CdState {
    /// State at explicit weights with a freshly computed cache.
    pub fn new(sigma: &CovarianceMatrix, w: DVector<f64>, gamma: f64) -> Result<Self> {
        if w.len() != sigma.p() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} assets",
                w.len(),
                sigma.p()
            )));
        }
        let z = compute_z(sigma, &w);
        Ok(Self {
            w,
            gamma,
            z,
            sweep: 0,
        })
    }

    /// State at the equally weighted start `w = 1/p`.
    pub fn uniform(sigma: &CovarianceMatrix, gamma: f64) -> Self {
        let p = sigma.p();
        let w = DVector::from_element(p, 1.0 / p as f64);
        let z = compute_z(sigma, &w);
        Self {
            w,
            gamma,
            z,
            sweep: 0,
        }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        self.gamma = gamma;
    }

    pub fn z_cache(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn sweep_count(&self) -> usize {
        self.sweep
    }

    /// Sets `w_i` and updates the cache incrementally in O(p).
    pub fn apply_update(&mut self, i: usize, new_wi: f64, sigma: &CovarianceMatrix) {
        let delta = new_wi - self.w[i];
        if delta == 0.0 {
            return;
        }
        self.w[i] = new_wi;
        let row = sigma.row_slice(i);
        for j in 0..self.w.len() {
            if j != i {
                self.z[j] += 2.0 * row[j] * delta;
            }
        }
    }

    /// Recomputes the cache from scratch, bounding incremental drift.
    pub fn refresh_z(&mut self, sigma: &CovarianceMatrix) {
        self.z = compute_z(sigma, &self.w);
    }

    /// Max relative deviation of the cache from its definition.
    pub fn z_drift(&self, sigma: &CovarianceMatrix) -> f64 {
        let exact = compute_z(sigma, &self.w);
        self.z
            .iter()
            .zip(exact.iter())
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0, f64::max)
    }
}

fn compute_z(sigma: &CovarianceMatrix, w: &DVector<f64>) -> DVector<f64> {
    let mut z = sigma.mul_vec(w) * 2.0;
    for i in 0..w.len() {
        z[i] -= 2.0 * sigma.variance(i) * w[i];
    }
    z
}

// ---------------------------------------------------------------------------
// Per-coordinate problem description
// ---------------------------------------------------------------------------

/// Per-coordinate threshold `t_i`, curvature `d_i`, and shift applied to the
/// cache (`z_eff = z + shift`). All three coordinate-descent families reduce
/// to this form.
pub(crate) struct CoordSpec {
    pub thresh: Vec<f64>,
    pub denom: Vec<f64>,
    pub shift: Vec<f64>,
    /// Scale standing in for λ in the γ initialization rule.
    pub gamma_scale: f64,
}

impl CoordSpec {
    pub(crate) fn build(sigma: &CovarianceMatrix, penalty: &PenaltyConfig) -> Result<Self> {
        let p = sigma.p();
        match penalty {
            PenaltyConfig::ElasticNet { lambda, alpha } => Ok(Self {
                thresh: vec![lambda * alpha; p],
                denom: (0..p)
                    .map(|i| 2.0 * (sigma.variance(i) + lambda * (1.0 - alpha)))
                    .collect(),
                shift: vec![0.0; p],
                gamma_scale: *lambda,
            }),
            PenaltyConfig::MeanVariance {
                lambda,
                alpha,
                tau,
                mu,
            } => Ok(Self {
                thresh: vec![lambda * alpha; p],
                denom: (0..p)
                    .map(|i| 2.0 * (sigma.variance(i) + lambda * (1.0 - alpha)))
                    .collect(),
                shift: mu.iter().map(|m| -tau * m).collect(),
                gamma_scale: *lambda,
            }),
            PenaltyConfig::WeightedL1 { lambda, eta } => Ok(Self {
                thresh: eta.iter().map(|e| lambda * e).collect(),
                denom: (0..p).map(|i| 2.0 * sigma.variance(i)).collect(),
                shift: vec![0.0; p],
                gamma_scale: lambda * eta.iter().copied().fold(0.0, f64::max),
            }),
            _ => Err(Error::InvalidInput(
                "penalty family not handled by the coordinate solver".into(),
            )),
        }
    }

    fn check_curvature(&self) -> Result<()> {
        for (i, &d) in self.denom.iter().enumerate() {
            if !(d > 0.0) {
                return Err(Error::DegenerateAsset(i));
            }
        }
        Ok(())
    }
}

/// Exact root of the monotone piecewise-linear budget map
/// `s(γ) = Σ_i ST(γ - z_i^eff, t_i)/d_i = 1`, with the cache frozen.
///
/// The closed-form γ update assumes the active signs survive the update; when
/// they flip each sweep the (sweep, update) pair can 2-cycle. The exact root
/// respects the sign changes and always exists because the extreme branches
/// of `s` have positive slope.
pub(crate) fn bisect_budget_gamma<F>(mut s: F, gamma0: f64, scale: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    let width0 = 1.0 + scale + gamma0.abs();
    let mut lo = gamma0 - width0;
    let mut hi = gamma0 + width0;
    for _ in 0..200 {
        if s(lo) <= 1.0 {
            break;
        }
        lo -= hi - lo;
    }
    for _ in 0..200 {
        if s(hi) >= 1.0 {
            break;
        }
        hi += hi - lo;
    }
    for _ in 0..200 {
        if (hi - lo).abs() <= 1e-14 * (1.0 + lo.abs() + hi.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if s(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn coord_budget_sum(state: &CdState, spec: &CoordSpec, gamma: f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..state.w.len() {
        let zeff = state.z[i] + spec.shift[i];
        sum += soft_threshold(gamma - zeff, spec.thresh[i]) / spec.denom[i];
    }
    sum
}

/// Two-level rescue for instances where the interleaved (sweep, γ-update)
/// heuristic cycles: bisection over γ with the inner Lagrangian minimized to
/// convergence at each fixed γ.
///
/// The map γ -> 1'w*(γ), with w*(γ) the fixed-γ minimizer, is nondecreasing
/// (for γ₁ < γ₂ the two optimality inequalities add up to
/// (γ₂-γ₁)(1'w₂ - 1'w₁) >= 0), so the budget root is found by monotone
/// bisection; the inner coordinate descent converges by standard separable
/// convexity arguments. Warm starts keep each evaluation cheap.
///
/// `update` computes the new `w_i` from the state at the state's γ.
/// Returns true when the final iterate passes the sweep and budget criteria;
/// the sweep budget in `sweeps_left` is consumed as the inner loops run.
pub(crate) fn budget_bisection_rescue<F>(
    sigma: &CovarianceMatrix,
    opts: &SolverOptions,
    state: &mut CdState,
    update: F,
    sweeps_left: &mut usize,
) -> bool
where
    F: Fn(&CdState, usize) -> f64,
{
    // inner minimization at fixed γ; returns (1'w*, last sweep's max |Δw|)
    fn minimize_at<F>(
        gamma: f64,
        sigma: &CovarianceMatrix,
        opts: &SolverOptions,
        state: &mut CdState,
        update: &F,
        sweeps_left: &mut usize,
    ) -> (f64, f64)
    where
        F: Fn(&CdState, usize) -> f64,
    {
        state.gamma = gamma;
        let p = state.w.len();
        let mut dw_final = f64::INFINITY;
        let mut inner = 0usize;
        while *sweeps_left > 0 && inner < 2000 {
            *sweeps_left -= 1;
            inner += 1;
            let mut max_dw = 0.0f64;
            for i in 0..p {
                let new_wi = update(state, i);
                let dw = (new_wi - state.w[i]).abs();
                if dw > 0.0 {
                    state.apply_update(i, new_wi, sigma);
                    if dw > max_dw {
                        max_dw = dw;
                    }
                }
            }
            if inner % 50 == 0 {
                state.refresh_z(sigma);
            }
            dw_final = max_dw;
            if max_dw <= opts.coord_tol {
                break;
            }
        }
        (state.w.sum(), dw_final)
    }

    let width0 = 1.0 + sigma.max_variance() + state.gamma.abs();
    let mut lo = state.gamma;
    let mut hi = state.gamma;
    let (s0, _) = minimize_at(state.gamma, sigma, opts, state, &update, sweeps_left);
    if s0 < 1.0 {
        let mut step = width0;
        for _ in 0..90 {
            hi += step;
            step *= 2.0;
            let (s, _) = minimize_at(hi, sigma, opts, state, &update, sweeps_left);
            if s >= 1.0 {
                break;
            }
            lo = hi;
        }
    } else {
        let mut step = width0;
        for _ in 0..90 {
            lo -= step;
            step *= 2.0;
            let (s, _) = minimize_at(lo, sigma, opts, state, &update, sweeps_left);
            if s <= 1.0 {
                break;
            }
            hi = lo;
        }
    }
    for _ in 0..200 {
        if *sweeps_left == 0 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (s, dw) = minimize_at(mid, sigma, opts, state, &update, sweeps_left);
        if (s - 1.0).abs() <= 0.5 * opts.budget_tol && dw <= opts.coord_tol {
            return true;
        }
        if s < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= 1e-15 * (1.0 + lo.abs() + hi.abs()) {
            let (s, dw) = minimize_at(0.5 * (lo + hi), sigma, opts, state, &update, sweeps_left);
            return (s - 1.0).abs() <= opts.budget_tol && dw <= opts.coord_tol;
        }
    }
    false
}

/// Closed-form γ over the active set, or `None` when every weight is zero.
fn gamma_formula(state: &CdState, spec: &CoordSpec) -> Option<f64> {
    let mut num = 1.0;
    let mut den = 0.0;
    for i in 0..state.w.len() {
        let wi = state.w[i];
        if wi == 0.0 {
            continue;
        }
        let zeff = state.z[i] + spec.shift[i];
        num += zeff / spec.denom[i];
        if wi > 0.0 {
            num += spec.thresh[i] / spec.denom[i];
        } else {
            num -= spec.thresh[i] / spec.denom[i];
        }
        den += 1.0 / spec.denom[i];
    }
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Elastic-net coordinate update `ST(γ - z_i, λα) / (2(σ_i² + λ(1-α)))`
/// evaluated at the current state. Does not mutate the state.
pub fn update_weight(
    i: usize,
    state: &CdState,
    sigma: &CovarianceMatrix,
    lambda: f64,
    alpha: f64,
) -> Result<f64> {
    let denom = 2.0 * (sigma.variance(i) + lambda * (1.0 - alpha));
    if !(denom > 0.0) {
        return Err(Error::DegenerateAsset(i));
    }
    Ok(soft_threshold(state.gamma - state.z[i], lambda * alpha) / denom)
}

/// Closed-form γ update over the current active set (elastic net).
///
/// Recomputing every active weight at the returned γ (signs unchanged) makes
/// the weights sum to exactly 1.
pub fn update_gamma(
    state: &CdState,
    sigma: &CovarianceMatrix,
    lambda: f64,
    alpha: f64,
) -> Result<f64> {
    let spec = CoordSpec::build(sigma, &PenaltyConfig::ElasticNet { lambda, alpha })?;
    spec.check_curvature()?;
    gamma_formula(state, &spec)
        .ok_or_else(|| Error::InvalidInput("active set is empty; γ update undefined".into()))
}

/// Solves the penalized MVP by coordinate-wise descent (elastic net,
/// mean-variance, or weighted l1), starting from `w = 1/p`.
pub fn solve(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<Solution> {
    solve_from(sigma, penalty, opts, None)
}

/// As [`solve`], but optionally warm-started from `initial` weights.
pub fn solve_from(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
    initial: Option<&DVector<f64>>,
) -> Result<Solution> {
    opts.validate()?;
    let p = sigma.p();
    penalty.validate(p)?;
    match penalty {
        PenaltyConfig::ElasticNet { .. }
        | PenaltyConfig::MeanVariance { .. }
        | PenaltyConfig::WeightedL1 { .. } => {}
        _ => {
            return Err(Error::InvalidInput(
                "use berhu_solver/group_solver for this penalty family".into(),
            ))
        }
    }

    let spec = CoordSpec::build(sigma, penalty)?;
    if spec.gamma_scale < direct_solve_threshold(sigma) {
        return direct_unpenalized(sigma, penalty, opts);
    }
    spec.check_curvature()?;

    let gamma0 = initial_gamma(sigma, spec.gamma_scale);
    let mut state = match initial {
        Some(w0) => CdState::new(sigma, w0.clone(), gamma0)?,
        None => CdState::uniform(sigma, gamma0),
    };

    let mut loop_converged = false;
    let mut inflations = 0usize;
    let mut best_budget = f64::INFINITY;
    let mut stagnation = 0usize;
    let mut rescues = 0usize;
    let mut sweeps_used = 0usize;
    while sweeps_used < opts.max_sweeps {
        sweeps_used += 1;
        if sweeps_used % 50 == 0 {
            state.refresh_z(sigma);
        }
        let mut max_dw = 0.0f64;
        for i in 0..p {
            let zeff = state.z[i] + spec.shift[i];
            let new_wi = soft_threshold(state.gamma - zeff, spec.thresh[i]) / spec.denom[i];
            let dw = (new_wi - state.w[i]).abs();
            if dw > 0.0 {
                state.apply_update(i, new_wi, sigma);
                if dw > max_dw {
                    max_dw = dw;
                }
            }
        }
        let budget = (state.w.sum() - 1.0).abs();
        if budget < 0.9 * best_budget {
            best_budget = budget;
            stagnation = 0;
        } else {
            stagnation += 1;
        }
        match gamma_formula(&state, &spec) {
            Some(gamma_formula_val) => {
                let gamma_new = if stagnation >= 5 {
                    // sign-pattern flip-flop: fall back to the exact root of
                    // the frozen-cache budget map
                    stagnation = 0;
                    best_budget = f64::INFINITY;
                    rescues += 1;
                    if rescues >= 3 {
                        // the interleaved heuristic is cycling; switch to the
                        // two-level scheme (bisection over γ, inner descent
                        // run to convergence at each γ)
                        let mut left = opts.max_sweeps - sweeps_used;
                        loop_converged = budget_bisection_rescue(
                            sigma,
                            opts,
                            &mut state,
                            |st: &CdState, i: usize| {
                                let zeff = st.z_cache()[i] + spec.shift[i];
                                soft_threshold(st.gamma() - zeff, spec.thresh[i]) / spec.denom[i]
                            },
                            &mut left,
                        );
                        sweeps_used = opts.max_sweeps - left;
                        break;
                    }
                    bisect_budget_gamma(
                        |g| coord_budget_sum(&state, &spec, g),
                        state.gamma,
                        sigma.max_variance(),
                    )
                } else {
                    gamma_formula_val
                };
                let dgamma = (gamma_new - state.gamma).abs();
                state.gamma = gamma_new;
                if max_dw <= opts.coord_tol
                    && budget <= opts.budget_tol
                    && dgamma <= opts.coord_tol * (1.0 + gamma_new.abs())
                {
                    loop_converged = true;
                    break;
                }
            }
            None => {
                // Every weight got thresholded to zero; the budget makes that
                // infeasible, so re-inflate γ and sweep again.
                inflations += 1;
                if inflations > 60 {
                    break;
                }
                state.gamma *= 1.5;
            }
        }
    }
    state.sweep = sweeps_used;

    finish(
        sigma,
        penalty,
        opts,
        state.w,
        state.gamma,
        state.sweep,
        loop_converged,
    )
}

/// Stationarity residual of a solution: the largest violation of the
/// first-order conditions of the configured penalty family, plus the budget
/// violation |Σw − 1|.
pub fn kkt_residual(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    sol: &Solution,
) -> Result<f64> {
    if sol.weights.len() != sigma.p() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} assets",
            sol.weights.len(),
            sigma.p()
        )));
    }
    if sol.weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite".into()));
    }
    match penalty {
        PenaltyConfig::ElasticNet { .. }
        | PenaltyConfig::MeanVariance { .. }
        | PenaltyConfig::WeightedL1 { .. } => {
            let spec = CoordSpec::build(sigma, penalty)?;
            Ok(coord_kkt(sigma, &spec, &sol.weights, sol.gamma))
        }
        PenaltyConfig::Berhu { lambda, delta } => Ok(crate::berhu_solver::berhu_kkt(
            sigma,
            *lambda,
            *delta,
            &sol.weights,
            sol.gamma,
        )),
        PenaltyConfig::AdaptiveGroup { lambda1, grouping } => {
            crate::group_solver::group_kkt(sigma, grouping, *lambda1, &sol.weights, sol.gamma)
        }
    }
}

pub(crate) fn coord_kkt(
    sigma: &CovarianceMatrix,
    spec: &CoordSpec,
    w: &DVector<f64>,
    gamma: f64,
) -> f64 {
    let z = compute_z(sigma, w);
    let mut worst = (w.sum() - 1.0).abs();
    for i in 0..w.len() {
        let zeff = z[i] + spec.shift[i];
        let r = if w[i] > 0.0 {
            (spec.denom[i] * w[i] + zeff - gamma + spec.thresh[i]).abs()
        } else if w[i] < 0.0 {
            (spec.denom[i] * w[i] + zeff - gamma - spec.thresh[i]).abs()
        } else {
            ((zeff - gamma).abs() - spec.thresh[i]).max(0.0)
        };
        if r > worst {
            worst = r;
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Shared solver plumbing (also used by the berhu and group solvers)
// ---------------------------------------------------------------------------

/// λ below this is treated as the unregularized problem and dispatched to a
/// direct KKT solve; coordinate descent converges too slowly to be useful
/// there.
pub(crate) fn direct_solve_threshold(sigma: &CovarianceMatrix) -> f64 {
    1e-8 * sigma.trace() / sigma.p() as f64
}

/// γ start value: the multiplier of the unregularized identity-like problem
/// sets the floor `2 min_i σ_i²`, preserving γ = 1.1λ whenever λ dominates.
pub(crate) fn initial_gamma(sigma: &CovarianceMatrix, lambda_scale: f64) -> f64 {
    let floor = 2.0 * sigma.min_variance();
    lambda_scale.max(floor) * 1.1
}

/// Direct solve of the (effectively) unpenalized problem, including any ridge
/// or expected-return terms that survive λ -> 0.
pub(crate) fn direct_unpenalized(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<Solution> {
    let p = sigma.p();
    let mut q = sigma.matrix().clone();
    let mut b = DVector::zeros(p);
    match penalty {
        PenaltyConfig::ElasticNet { lambda, alpha }
        | PenaltyConfig::MeanVariance { lambda, alpha, .. } => {
            let ridge = lambda * (1.0 - alpha);
            for i in 0..p {
                q[(i, i)] += ridge;
            }
        }
        _ => {}
    }
    if let PenaltyConfig::MeanVariance { tau, mu, .. } = penalty {
        b = mu * *tau;
    }
    let (w, gamma) = solve_budget_qp(&q, &b)?;
    finish(sigma, penalty, opts, w, gamma, 0, true)
}

/// Assembles a [`Solution`], demoting `converged` when the stationarity or
/// budget checks fail the configured tolerances.
pub(crate) fn finish(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
    w: DVector<f64>,
    gamma: f64,
    iterations: usize,
    loop_converged: bool,
) -> Result<Solution> {
    let objective = objective_value(sigma, penalty, &w)?;
    let mut sol = Solution {
        weights: w,
        gamma,
        iterations,
        converged: false,
        objective,
        kkt_residual: f64::NAN,
    };
    sol.kkt_residual = kkt_residual(sigma, penalty, &sol)?;
    let kkt_bound = opts.kkt_tol * (1.0 + sigma.max_variance());
    let budget_ok = (sol.weights.sum() - 1.0).abs() <= opts.budget_tol;
    sol.converged = loop_converged && budget_ok && sol.kkt_residual <= kkt_bound;
    Ok(sol)
}
