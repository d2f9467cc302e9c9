//! Independent small-scale verification solvers.
//!
//! [`solve_generic`] minimizes any configured penalized objective over the
//! budget hyperplane with a different algorithmic route than the production
//! solvers: multistart projected subgradient descent to localize the sign
//! pattern (or active groups), followed by exact polishing — the
//! equality-constrained stationarity system of the detected pattern is solved
//! directly and the pattern refined from its KKT violations. The coordinate
//! solvers are never invoked, so agreement between the two routes is evidence,
//! not tautology.
//!
//! [`solve_no_shortsale`] is an active-set solver for the no-shortsale MVP
//! (min w'Σw, w'1 = 1, w >= 0), used both as a test oracle and as the
//! no-shortsale benchmark strategy of the backtest engine.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

use crate::cd_solver::CoordSpec;
use crate::linalg::solve_budget_qp;
use crate::model::{
    objective_value, CovarianceMatrix, Error, PenaltyConfig, Result, Solution, SolverOptions,
};

/// Controls for the generic verification solver.
#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Largest problem size accepted.
    pub max_p: usize,
    /// Number of random feasible starts (the equally weighted start is always
    /// included on top).
    pub starts: usize,
    /// Projected-subgradient iterations per start.
    pub subgrad_iters: usize,
    /// RNG seed; the whole solve is deterministic given the seed.
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            max_p: 16,
            starts: 32,
            subgrad_iters: 400,
            seed: 42,
        }
    }
}

/// Minimizes the configured objective subject to w'1 = 1 by multistart
/// projected subgradient descent plus exact pattern polishing.
pub fn solve_generic(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    opts: &OracleOptions,
) -> Result<Solution> {
    let p = sigma.p();
    if p > opts.max_p {
        return Err(Error::OracleBound {
            p,
            max_p: opts.max_p,
        });
    }
    penalty.validate(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let uniform = DVector::from_element(p, 1.0 / p as f64);
    struct Candidate {
        obj: f64,
        w: DVector<f64>,
        gamma: f64,
        refines: usize,
    }
    let mut best: Option<Candidate> = None;

    for start in 0..=opts.starts {
        let w0 = if start == 0 {
            uniform.clone()
        } else {
            let mut w = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
            let shift = (w.sum() - 1.0) / p as f64;
            for i in 0..p {
                w[i] -= shift;
            }
            w
        };
        let localized = projected_subgradient(sigma, penalty, &w0, opts.subgrad_iters);
        let polished = match penalty {
            PenaltyConfig::AdaptiveGroup { lambda1, grouping } => {
                polish_group(sigma, grouping, *lambda1, &localized)
            }
            _ => polish_coord(sigma, penalty, &localized),
        };
        if let Some((w, gamma, refines)) = polished {
            if !w.iter().all(|v| v.is_finite()) {
                continue;
            }
            if let Ok(obj) = objective_value(sigma, penalty, &w) {
                // strict improvement keeps the lowest start index on ties
                if best.as_ref().map_or(true, |b| obj < b.obj) {
                    best = Some(Candidate {
                        obj,
                        w,
                        gamma,
                        refines,
                    });
                }
            }
        }
    }

    // The 1/p point is always a feasible fallback candidate.
    let fallback_obj = objective_value(sigma, penalty, &uniform)?;
    let (obj, w, gamma, refines) = match best {
        Some(b) if b.obj <= fallback_obj => (b.obj, b.w, b.gamma, b.refines),
        _ => (fallback_obj, uniform, 0.0, 0),
    };

    let mut sol = Solution {
        weights: w,
        gamma,
        iterations: refines,
        converged: false,
        objective: obj,
        kkt_residual: f64::NAN,
    };
    sol.kkt_residual = crate::cd_solver::kkt_residual(sigma, penalty, &sol)?;
    sol.converged = sol.kkt_residual <= 1e-6 * (1.0 + sigma.max_variance())
        && (sol.weights.sum() - 1.0).abs() <= 1e-8;
    Ok(sol)
}

/// Subgradient of the full penalized objective (without the budget term).
fn subgradient(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    w: &DVector<f64>,
) -> DVector<f64> {
    let mut g = sigma.mul_vec(w) * 2.0;
    match penalty {
        PenaltyConfig::ElasticNet { lambda, alpha } => {
            for i in 0..w.len() {
                g[i] +=
                    2.0 * lambda * (1.0 - alpha) * w[i] + lambda * alpha * w[i].signum_or_zero();
            }
        }
        PenaltyConfig::MeanVariance {
            lambda,
            alpha,
            tau,
            mu,
        } => {
            for i in 0..w.len() {
                g[i] += 2.0 * lambda * (1.0 - alpha) * w[i]
                    + lambda * alpha * w[i].signum_or_zero()
                    - tau * mu[i];
            }
        }
        PenaltyConfig::WeightedL1 { lambda, eta } => {
            for i in 0..w.len() {
                g[i] += lambda * eta[i] * w[i].signum_or_zero();
            }
        }
        PenaltyConfig::Berhu { lambda, delta } => {
            for i in 0..w.len() {
                if w[i].abs() < *delta {
                    g[i] += lambda * w[i].signum_or_zero();
                } else {
                    g[i] += lambda * w[i] / delta;
                }
            }
        }
        PenaltyConfig::AdaptiveGroup { lambda1, grouping } => {
            for gset in grouping.groups() {
                let mut aw = vec![0.0; gset.len()];
                let mut q = 0.0;
                for (r, &i) in gset.iter().enumerate() {
                    for &j in gset {
                        aw[r] += sigma.matrix()[(i, j)] * w[j];
                    }
                    q += aw[r] * w[i];
                }
                let norm = q.max(0.0).sqrt();
                if norm > 0.0 {
                    for (r, &i) in gset.iter().enumerate() {
                        g[i] += lambda1 * aw[r] / norm;
                    }
                }
            }
        }
    }
    g
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Diminishing-step subgradient descent restricted to the budget hyperplane.
fn projected_subgradient(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    w0: &DVector<f64>,
    iters: usize,
) -> DVector<f64> {
    let p = w0.len();
    let scale = 2.0 * sigma.max_variance() * p as f64 + 1.0;
    let base = 1.0 / scale;
    let mut w = w0.clone();
    let mut best = w.clone();
    let mut best_obj = objective_value(sigma, penalty, &w).unwrap_or(f64::INFINITY);
    for k in 0..iters {
        let mut g = subgradient(sigma, penalty, &w);
        let mean = g.sum() / p as f64;
        for i in 0..p {
            g[i] -= mean;
        }
        let step = base / ((k + 1) as f64).sqrt();
        w.axpy(-step, &g, 1.0);
        if let Ok(obj) = objective_value(sigma, penalty, &w) {
            if obj < best_obj {
                best_obj = obj;
                best.copy_from(&w);
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Exact polishing on a detected pattern
// ---------------------------------------------------------------------------

/// Coordinate state codes: 0 zero, ±1 l1-active with that sign, ±2 quadratic
/// branch (berhu only).
type Pattern = Vec<i8>;

fn detect_coord_pattern(penalty: &PenaltyConfig, w: &DVector<f64>) -> Pattern {
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let zero_tol = 1e-3 * scale;
    w.iter()
        .map(|&wi| {
            if wi.abs() <= zero_tol {
                0
            } else if let PenaltyConfig::Berhu { delta, .. } = penalty {
                if wi.abs() >= *delta {
                    if wi > 0.0 {
                        2
                    } else {
                        -2
                    }
                } else if wi > 0.0 {
                    1
                } else {
                    -1
                }
            } else if wi > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// Solves the stationarity system of a fixed pattern exactly and iterates
/// pattern refinement from the KKT violations until stable.
fn polish_coord(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    localized: &DVector<f64>,
) -> Option<(DVector<f64>, f64, usize)> {
    let mut pattern = detect_coord_pattern(penalty, localized);
    let mut seen: HashSet<Pattern> = HashSet::new();
    let mut best: Option<(DVector<f64>, f64, usize)> = None;
    for round in 0..60 {
        if !seen.insert(pattern.clone()) {
            break;
        }
        let solved = solve_coord_pattern(sigma, penalty, &pattern)?;
        let (w, gamma) = solved;
        let next = refine_coord_pattern(sigma, penalty, &w, gamma);
        let stable = next == pattern;
        best = Some((w, gamma, round + 1));
        if stable {
            break;
        }
        pattern = next;
    }
    // all-zero patterns cannot satisfy the budget
    if best.is_none() && pattern.iter().all(|&s| s == 0) {
        return None;
    }
    best.filter(|(w, _, _)| w.iter().all(|v| v.is_finite()))
}

fn solve_coord_pattern(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    pattern: &Pattern,
) -> Option<(DVector<f64>, f64)> {
    let p = sigma.p();
    let active: Vec<usize> = (0..p).filter(|&i| pattern[i] != 0).collect();
    if active.is_empty() {
        return None;
    }
    let n = active.len();
    let mut q = DMatrix::zeros(n, n);
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            q[(r, c)] = sigma.matrix()[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(n);
    match penalty {
        PenaltyConfig::ElasticNet { lambda, alpha } => {
            for r in 0..n {
                q[(r, r)] += lambda * (1.0 - alpha);
                rhs[r] = -lambda * alpha * pattern[active[r]] as f64;
            }
        }
        PenaltyConfig::MeanVariance {
            lambda,
            alpha,
            tau,
            mu,
        } => {
            for (r, &i) in active.iter().enumerate() {
                q[(r, r)] += lambda * (1.0 - alpha);
                rhs[r] = tau * mu[i] - lambda * alpha * pattern[i] as f64;
            }
        }
        PenaltyConfig::WeightedL1 { lambda, eta } => {
            for (r, &i) in active.iter().enumerate() {
                rhs[r] = -lambda * eta[i] * pattern[i] as f64;
            }
        }
        PenaltyConfig::Berhu { lambda, delta } => {
            for (r, &i) in active.iter().enumerate() {
                match pattern[i] {
                    1 | -1 => rhs[r] = -lambda * pattern[i] as f64,
                    2 | -2 => q[(r, r)] += lambda / (2.0 * delta),
                    _ => unreachable!(),
                }
            }
        }
        PenaltyConfig::AdaptiveGroup { .. } => return None,
    }
    let (w_a, gamma) = solve_budget_qp(&q, &rhs).ok()?;
    let mut w = DVector::zeros(p);
    for (r, &i) in active.iter().enumerate() {
        w[i] = w_a[r];
    }
    Some((w, gamma))
}

fn refine_coord_pattern(
    sigma: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    w: &DVector<f64>,
    gamma: f64,
) -> Pattern {
    let p = sigma.p();
    let grad2 = sigma.mul_vec(w) * 2.0;
    let eps = 1e-11 * (1.0 + sigma.max_variance());
    let mut next = vec![0i8; p];
    match penalty {
        PenaltyConfig::Berhu { lambda, delta } => {
            for i in 0..p {
                let wi = w[i];
                if wi != 0.0 {
                    next[i] = if wi.abs() >= *delta {
                        if wi > 0.0 {
                            2
                        } else {
                            -2
                        }
                    } else if wi > 0.0 {
                        1
                    } else {
                        -1
                    };
                } else {
                    let z = grad2[i];
                    if (z - gamma).abs() - lambda > eps {
                        let s2 = sigma.variance(i);
                        if (gamma - z).abs() >= 2.0 * s2 * delta + lambda {
                            next[i] = if gamma - z > 0.0 { 2 } else { -2 };
                        } else {
                            next[i] = if gamma - z > 0.0 { 1 } else { -1 };
                        }
                    }
                }
            }
        }
        _ => {
            let spec = CoordSpec::build(sigma, penalty).expect("coordinate family");
            for i in 0..p {
                let wi = w[i];
                if wi != 0.0 {
                    next[i] = if wi > 0.0 { 1 } else { -1 };
                } else {
                    let zeff = grad2[i] + spec.shift[i];
                    if (zeff - gamma).abs() - spec.thresh[i] > eps {
                        next[i] = if gamma - zeff > 0.0 { 1 } else { -1 };
                    }
                }
            }
        }
    }
    next
}

/// IRLS polishing of the group problem on a fixed set of active groups, with
/// activation/deactivation refinement driven by the Λ_l(γ) test.
fn polish_group(
    sigma: &CovarianceMatrix,
    grouping: &crate::model::GroupStructure,
    lambda1: f64,
    localized: &DVector<f64>,
) -> Option<(DVector<f64>, f64, usize)> {
    let nl = grouping.len();
    let block_norm = |w: &DVector<f64>, l: usize| -> f64 {
        let g = grouping.group(l);
        let mut q = 0.0;
        for &i in g {
            for &j in g {
                q += w[i] * sigma.matrix()[(i, j)] * w[j];
            }
        }
        q.max(0.0).sqrt()
    };
    let scale = (0..nl)
        .map(|l| block_norm(localized, l))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut active: Vec<bool> = (0..nl)
        .map(|l| block_norm(localized, l) > 1e-3 * scale)
        .collect();
    if active.iter().all(|&a| !a) {
        active = vec![true; nl];
    }

    let mut rounds = 0usize;
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    loop {
        rounds += 1;
        if rounds > 40 || !seen.insert(active.clone()) {
            return None;
        }
        let (w, gamma) = irls_on_active(sigma, grouping, lambda1, &active, localized)?;
        // activation test for zero groups
        let y2 = sigma.mul_vec(&w) * 2.0;
        let mut changed = false;
        let mut next = active.clone();
        for l in 0..nl {
            let g = grouping.group(l);
            let wl_zero = g.iter().all(|&i| w[i] == 0.0);
            if wl_zero {
                // B_l = 2(Σw)_l on the zero block
                let k = g.len();
                let mut a = DMatrix::zeros(k, k);
                for (r, &i) in g.iter().enumerate() {
                    for (c, &j) in g.iter().enumerate() {
                        a[(r, c)] = sigma.matrix()[(i, j)];
                    }
                }
                let inv_sqrt = crate::group_solver::inverse_sqrt_sym(&a).ok()?;
                let v = DVector::from_fn(k, |r, _| gamma - y2[g[r]]);
                let lam = (&inv_sqrt * v).norm();
                if lam > lambda1 + 1e-11 * (1.0 + sigma.max_variance()) {
                    next[l] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            // deactivations already happened inside IRLS (dropped groups)
            for l in 0..nl {
                next[l] = !grouping.group(l).iter().all(|&i| w[i] == 0.0);
            }
            return Some((w, gamma, rounds));
        }
        active = next;
    }
}

fn irls_on_active(
    sigma: &CovarianceMatrix,
    grouping: &crate::model::GroupStructure,
    lambda1: f64,
    active0: &[bool],
    w_init: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let p = sigma.p();
    let mut active = active0.to_vec();
    'outer: for _ in 0..grouping.len() + 1 {
        let idx: Vec<usize> = (0..grouping.len())
            .filter(|&l| active[l])
            .flat_map(|l| grouping.group(l).iter().copied())
            .collect();
        if idx.is_empty() {
            return None;
        }
        let n = idx.len();
        let pos: std::collections::HashMap<usize, usize> =
            idx.iter().enumerate().map(|(r, &i)| (i, r)).collect();
        // initial block norms from the localized point (floored away from 0)
        let mut v: Vec<f64> = (0..grouping.len())
            .map(|l| {
                if !active[l] {
                    return 0.0;
                }
                let g = grouping.group(l);
                let mut q = 0.0;
                for &i in g {
                    for &j in g {
                        q += w_init[i] * sigma.matrix()[(i, j)] * w_init[j];
                    }
                }
                q.max(0.0).sqrt().max(1e-6)
            })
            .collect();
        let mut w_prev: Option<DVector<f64>> = None;
        for _iter in 0..500 {
            let mut q = DMatrix::zeros(n, n);
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    q[(r, c)] = sigma.matrix()[(i, j)];
                }
            }
            if lambda1 > 0.0 {
                for l in 0..grouping.len() {
                    if !active[l] {
                        continue;
                    }
                    let g = grouping.group(l);
                    let coef = lambda1 / (2.0 * v[l]);
                    for &i in g {
                        for &j in g {
                            q[(pos[&i], pos[&j])] += coef * sigma.matrix()[(i, j)];
                        }
                    }
                }
            }
            let (w_a, gamma) = solve_budget_qp(&q, &DVector::zeros(n)).ok()?;
            let mut w = DVector::zeros(p);
            for (r, &i) in idx.iter().enumerate() {
                w[i] = w_a[r];
            }
            // update block norms; drop collapsed groups and restart
            let mut dropped = false;
            for l in 0..grouping.len() {
                if !active[l] {
                    continue;
                }
                let g = grouping.group(l);
                let mut qf = 0.0;
                for &i in g {
                    for &j in g {
                        qf += w[i] * sigma.matrix()[(i, j)] * w[j];
                    }
                }
                let norm = qf.max(0.0).sqrt();
                if lambda1 > 0.0 && norm < 1e-10 {
                    active[l] = false;
                    dropped = true;
                } else {
                    v[l] = norm.max(1e-300);
                }
            }
            if dropped {
                continue 'outer;
            }
            let done = w_prev
                .as_ref()
                .map(|prev| (&w - prev).amax() <= 1e-13 * (1.0 + w.amax()))
                .unwrap_or(false);
            if done {
                return Some((w, gamma));
            }
            w_prev = Some(w);
        }
        // IRLS hit the iteration cap; return the last iterate anyway
        if let Some(w) = w_prev {
            // recover gamma from stationarity of the weighted system
            let grad2 = sigma.mul_vec(&w) * 2.0;
            let mut gnum = 0.0;
            let mut gden = 0.0;
            for &i in &idx {
                gnum += grad2[i];
                gden += 1.0;
            }
            return Some((w, gnum / gden));
        }
        return None;
    }
    None
}

// ---------------------------------------------------------------------------
// No-shortsale MVP by primal active set
// ---------------------------------------------------------------------------

/// Minimizes w'Σw subject to w'1 = 1 and w >= 0.
///
/// Primal active-set iteration: solve the equality-constrained problem on the
/// free coordinates, clamp the first coordinate driven negative (ratio test
/// from the previous feasible iterate), and release clamped coordinates whose
/// multipliers indicate descent. Terminates KKT-verified.
pub fn solve_no_shortsale(sigma: &CovarianceMatrix, opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    let p = sigma.p();
    let mut free = vec![true; p];
    let mut w = DVector::from_element(p, 1.0 / p as f64);
    let mut gamma;
    let max_iter = 10 * p;
    let scale = 1.0 + sigma.max_variance();
    let release_tol = 1e-10 * scale;

    let mut iter = 0usize;
    loop {
        iter += 1;
        if iter > max_iter {
            return Err(Error::CyclingGuard(max_iter));
        }
        let idx: Vec<usize> = (0..p).filter(|&i| free[i]).collect();
        let n = idx.len();
        let mut q = DMatrix::zeros(n, n);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                q[(r, c)] = sigma.matrix()[(i, j)];
            }
        }
        let (w_f, g) = solve_budget_qp(&q, &DVector::zeros(n))?;
        let min_new = w_f.min();
        if min_new >= -1e-12 {
            for (r, &i) in idx.iter().enumerate() {
                w[i] = w_f[r].max(0.0);
            }
            gamma = g;
            // multipliers of the clamped coordinates
            let grad2 = sigma.mul_vec(&w) * 2.0;
            let mut worst_i = None;
            let mut worst_mu = -release_tol;
            for i in 0..p {
                if free[i] {
                    continue;
                }
                let mu = grad2[i] - gamma;
                if mu < worst_mu {
                    worst_mu = mu;
                    worst_i = Some(i);
                }
            }
            match worst_i {
                Some(i) => {
                    free[i] = true;
                }
                None => break,
            }
        } else {
            // ratio test from the current feasible iterate toward w_f
            let mut alpha = f64::INFINITY;
            let mut blocker = usize::MAX;
            for (r, &i) in idx.iter().enumerate() {
                if w_f[r] < 0.0 {
                    let denom = w[i] - w_f[r];
                    let a = if denom > 0.0 { w[i] / denom } else { 0.0 };
                    if a < alpha {
                        alpha = a;
                        blocker = i;
                    }
                }
            }
            for (r, &i) in idx.iter().enumerate() {
                w[i] += alpha * (w_f[r] - w[i]);
            }
            w[blocker] = 0.0;
            free[blocker] = false;
        }
    }

    // KKT verification: stationarity on the support, multiplier sign off it,
    // budget, complementary slackness.
    let grad2 = sigma.mul_vec(&w) * 2.0;
    let mut kkt = (w.sum() - 1.0).abs();
    for i in 0..p {
        if w[i] > 0.0 {
            kkt = kkt.max((grad2[i] - gamma).abs());
            kkt = kkt.max((-w[i]).max(0.0));
        } else {
            let mu = grad2[i] - gamma;
            kkt = kkt.max((-mu).max(0.0));
            kkt = kkt.max((w[i] * mu).abs());
        }
    }
    let objective = w.dot(&sigma.mul_vec(&w));
    Ok(Solution {
        weights: w,
        gamma,
        iterations: iter,
        converged: kkt <= 1e-8 * scale,
        objective,
        kkt_residual: kkt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{random_spd, seeded_rng};
    use nalgebra::{dmatrix, DMatrix};

    #[test]
    fn generic_diagonal_unregularized() {
        let sigma = CovarianceMatrix::from_matrix(dmatrix![1.0, 0.0; 0.0, 4.0]).unwrap();
        let sol = solve_generic(
            &sigma,
            &PenaltyConfig::ElasticNet {
                lambda: 0.0,
                alpha: 1.0,
            },
            &OracleOptions::default(),
        )
        .unwrap();
        assert!((sol.weights[0] - 0.8).abs() < 1e-10);
        assert!((sol.weights[1] - 0.2).abs() < 1e-10);
    }

    #[test]
    fn generic_symmetric_penalty_gives_uniform() {
        let sigma = CovarianceMatrix::from_matrix(DMatrix::identity(4, 4)).unwrap();
        for pen in [
            PenaltyConfig::ElasticNet {
                lambda: 1.0,
                alpha: 0.5,
            },
            PenaltyConfig::Berhu {
                lambda: 0.7,
                delta: 0.4,
            },
        ] {
            let sol = solve_generic(&sigma, &pen, &OracleOptions::default()).unwrap();
            for i in 0..4 {
                assert!((sol.weights[i] - 0.25).abs() < 1e-9, "{:?}", pen);
            }
        }
    }

    #[test]
    fn generic_never_worse_than_uniform() {
        let mut rng = seeded_rng(51);
        for _ in 0..10 {
            let p = rng.random_range(3..8);
            let sigma = random_spd(&mut rng, p, 0.2, 3.0);
            let pen = PenaltyConfig::ElasticNet {
                lambda: rng.random_range(0.0..2.0),
                alpha: rng.random_range(0.0..1.0),
            };
            let sol = solve_generic(&sigma, &pen, &OracleOptions::default()).unwrap();
            let uniform = DVector::from_element(p, 1.0 / p as f64);
            let base = objective_value(&sigma, &pen, &uniform).unwrap();
            assert!(sol.objective <= base + 1e-12);
        }
    }

    #[test]
    fn generic_bound_enforced() {
        let mut rng = seeded_rng(52);
        let sigma = random_spd(&mut rng, 5, 0.2, 2.0);
        let opts = OracleOptions {
            max_p: 4,
            ..Default::default()
        };
        assert!(matches!(
            solve_generic(
                &sigma,
                &PenaltyConfig::ElasticNet {
                    lambda: 0.1,
                    alpha: 1.0
                },
                &opts
            ),
            Err(Error::OracleBound { .. })
        ));
    }

    #[test]
    fn no_shortsale_interior_solution() {
        let sigma = CovarianceMatrix::from_matrix(dmatrix![1.0, 0.0; 0.0, 4.0]).unwrap();
        let sol = solve_no_shortsale(&sigma, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.weights[0] - 0.8).abs() < 1e-12);
        assert!((sol.weights[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn no_shortsale_clamps_heavily_shorted_asset() {
        let eps = 0.01;
        let sigma = CovarianceMatrix::from_matrix(dmatrix![1.0, 0.9; 0.9, 0.81 + eps]).unwrap();
        let sol = solve_no_shortsale(&sigma, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.weights.min() >= -1e-12);
        // brute-force grid over the 1-simplex at resolution 1e-4
        let mut best = f64::INFINITY;
        for k in 0..=10_000 {
            let w0 = k as f64 * 1e-4;
            let w = nalgebra::dvector![w0, 1.0 - w0];
            best = best.min(w.dot(&sigma.mul_vec(&w)));
        }
        assert!(sol.objective <= best + 1e-3);
    }

    #[test]
    fn no_shortsale_matches_support_enumeration_p3() {
        let mut rng = seeded_rng(53);
        for _ in 0..25 {
            let sigma = random_spd(&mut rng, 3, 0.2, 3.0);
            let sol = solve_no_shortsale(&sigma, &SolverOptions::default()).unwrap();
            assert!(sol.converged);
            // enumerate all 7 nonempty supports, solve each in closed form,
            // keep feasible candidates
            let mut best = f64::INFINITY;
            for mask in 1u8..8 {
                let idx: Vec<usize> = (0..3).filter(|&i| mask & (1 << i) != 0).collect();
                let n = idx.len();
                let mut q = DMatrix::zeros(n, n);
                for (r, &i) in idx.iter().enumerate() {
                    for (c, &j) in idx.iter().enumerate() {
                        q[(r, c)] = sigma.matrix()[(i, j)];
                    }
                }
                if let Ok((wf, _)) = solve_budget_qp(&q, &DVector::zeros(n)) {
                    if wf.min() >= -1e-12 {
                        let mut w = DVector::zeros(3);
                        for (r, &i) in idx.iter().enumerate() {
                            w[i] = wf[r];
                        }
                        best = best.min(w.dot(&sigma.mul_vec(&w)));
                    }
                }
            }
            assert!((sol.objective - best).abs() <= 1e-9 * (1.0 + best.abs()));
        }
    }

    #[test]
    fn no_shortsale_kkt_invariants() {
        let mut rng = seeded_rng(54);
        for _ in 0..15 {
            let p = rng.random_range(2..12);
            let sigma = random_spd(&mut rng, p, 0.1, 4.0);
            let sol = solve_no_shortsale(&sigma, &SolverOptions::default()).unwrap();
            assert!(sol.converged);
            assert!(sol.weights.min() >= -1e-12);
            assert!((sol.weights.sum() - 1.0).abs() <= 1e-10);
            let grad2 = sigma.mul_vec(&sol.weights) * 2.0;
            for i in 0..p {
                if sol.weights[i] == 0.0 {
                    assert!(grad2[i] - sol.gamma >= -1e-8 * (1.0 + sigma.max_variance()));
                }
            }
        }
    }
}
