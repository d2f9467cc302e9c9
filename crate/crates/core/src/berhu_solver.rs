//! Coordinate-wise descent for the berhu-penalized MVP.
//!
//! The berhu (reverse Huber) penalty is l1 inside `|w_i| < δ` and quadratic
//! beyond, continuous at the boundary:
//!
//! ```text
//!     λ Σ ( |w_i|·1{|w_i| < δ} + (w_i² + δ²)/(2δ)·1{|w_i| >= δ} )
//! ```
//!
//! The coordinate update has two branches, selected by comparing `|γ - z_i|`
//! against `2σ_i²δ + λ`:
//!
//! ```text
//!     w_i <- ST(γ - z_i, λ) / (2σ_i²)          if |γ - z_i| < 2σ_i²δ + λ
//!     w_i <- (γ - z_i) / (2σ_i² + λ/δ)         otherwise
//! ```
//!
//! γ is re-solved between sweeps from the same budget algebra as the
//! elastic-net case, with the branch partition recomputed from the current
//! (γ, z).

use nalgebra::DVector;

use crate::cd_solver::{
    direct_solve_threshold, direct_unpenalized, finish, initial_gamma, soft_threshold, CdState,
};
use crate::model::{CovarianceMatrix, Error, PenaltyConfig, Result, Solution, SolverOptions};

/// Berhu penalty value at `w`.
pub fn berhu_penalty(w: &DVector<f64>, lambda: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    lambda
        * w.iter()
            .map(|wi| {
                let a = wi.abs();
                if a < delta {
                    a
                } else {
                    (wi * wi + delta * delta) / (2.0 * delta)
                }
            })
            .sum::<f64>()
}

/// Solves the berhu-penalized MVP by the two-branch coordinate descent.
pub fn solve_berhu(
    sigma: &CovarianceMatrix,
    lambda: f64,
    delta: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    solve_berhu_from(sigma, lambda, delta, opts, None)
}

/// As [`solve_berhu`], optionally warm-started.
pub fn solve_berhu_from(
    sigma: &CovarianceMatrix,
    lambda: f64,
    delta: f64,
    opts: &SolverOptions,
    initial: Option<&DVector<f64>>,
) -> Result<Solution> {
    opts.validate()?;
    let penalty = PenaltyConfig::Berhu { lambda, delta };
    let p = sigma.p();
    penalty.validate(p)?;

    // Penalty slope near |w| ~ 1 is λ·max(1, 1/δ-ish); below the threshold the
    // problem is effectively unregularized.
    if lambda * (1.0 + 0.5 / delta) < direct_solve_threshold(sigma) {
        return direct_unpenalized(sigma, &penalty, opts);
    }
    for i in 0..p {
        if !(sigma.variance(i) > 0.0) {
            return Err(Error::DegenerateAsset(i));
        }
    }

    let gamma0 = initial_gamma(sigma, lambda);
    let mut state = match initial {
        Some(w0) => CdState::new(sigma, w0.clone(), gamma0)?,
        None => CdState::uniform(sigma, gamma0),
    };

    let berhu_update = |st: &CdState, i: usize| -> f64 {
        let s2 = sigma.variance(i);
        let a = st.gamma() - st.z_cache()[i];
        if a.abs() < 2.0 * s2 * delta + lambda {
            soft_threshold(a, lambda) / (2.0 * s2)
        } else {
            a / (2.0 * s2 + lambda / delta)
        }
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
            let new_wi = berhu_update(&state, i);
            let dw = (new_wi - state.weights()[i]).abs();
            if dw > 0.0 {
                state.apply_update(i, new_wi, sigma);
                if dw > max_dw {
                    max_dw = dw;
                }
            }
        }
        let budget = (state.weights().sum() - 1.0).abs();
        if budget < 0.9 * best_budget {
            best_budget = budget;
            stagnation = 0;
        } else {
            stagnation += 1;
        }
        match berhu_gamma(&state, sigma, lambda, delta) {
            Some(gamma_formula_val) => {
                let gamma_new = if stagnation >= 5 {
                    // branch-membership flip-flop: take the exact root of the
                    // frozen-cache budget map instead
                    stagnation = 0;
                    best_budget = f64::INFINITY;
                    rescues += 1;
                    if rescues >= 3 {
                        // cycling despite root corrections: two-level scheme
                        let mut left = opts.max_sweeps - sweeps_used;
                        loop_converged = crate::cd_solver::budget_bisection_rescue(
                            sigma,
                            opts,
                            &mut state,
                            berhu_update,
                            &mut left,
                        );
                        sweeps_used = opts.max_sweeps - left;
                        break;
                    }
                    crate::cd_solver::bisect_budget_gamma(
                        |g| berhu_budget_sum(&state, sigma, lambda, delta, g),
                        state.gamma(),
                        sigma.max_variance(),
                    )
                } else {
                    gamma_formula_val
                };
                let dgamma = (gamma_new - state.gamma()).abs();
                state.set_gamma(gamma_new);
                if max_dw <= opts.coord_tol
                    && budget <= opts.budget_tol
                    && dgamma <= opts.coord_tol * (1.0 + gamma_new.abs())
                {
                    loop_converged = true;
                    break;
                }
            }
            None => {
                inflations += 1;
                if inflations > 60 {
                    break;
                }
                state.set_gamma(state.gamma() * 1.5);
            }
        }
    }

    let (w, gamma) = (state.weights().clone(), state.gamma());
    finish(sigma, &penalty, opts, w, gamma, sweeps_used, loop_converged)
}

/// Budget-restoring γ over the branch partition Δ⁻ (l1, only nonzero
/// coordinates count) and Δ⁺ (quadratic, always active). `None` when no
/// coordinate contributes.
fn berhu_gamma(state: &CdState, sigma: &CovarianceMatrix, lambda: f64, delta: f64) -> Option<f64> {
    let mut num = 1.0;
    let mut den = 0.0;
    for i in 0..sigma.p() {
        let s2 = sigma.variance(i);
        let z = state.z_cache()[i];
        let in_l1 = (state.gamma() - z).abs() < 2.0 * s2 * delta + lambda;
        if in_l1 {
            let wi = state.weights()[i];
            if wi == 0.0 {
                continue;
            }
            let d = 2.0 * s2;
            num += z / d;
            if wi > 0.0 {
                num += lambda / d;
            } else {
                num -= lambda / d;
            }
            den += 1.0 / d;
        } else {
            let d = 2.0 * s2 + lambda / delta;
            num += z / d;
            den += 1.0 / d;
        }
    }
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Budget map `s(γ) = Σ_i w_i(γ)` with the cache frozen: continuous,
/// piecewise linear, nondecreasing (both branch slopes are positive and the
/// branches agree at the cut).
fn berhu_budget_sum(
    state: &CdState,
    sigma: &CovarianceMatrix,
    lambda: f64,
    delta: f64,
    gamma: f64,
) -> f64 {
    let mut sum = 0.0;
    for i in 0..sigma.p() {
        let s2 = sigma.variance(i);
        let a = gamma - state.z_cache()[i];
        sum += if a.abs() < 2.0 * s2 * delta + lambda {
            soft_threshold(a, lambda) / (2.0 * s2)
        } else {
            a / (2.0 * s2 + lambda / delta)
        };
    }
    sum
}

/// Four-case stationarity residual of the berhu optimality conditions plus the
/// budget violation.
pub(crate) fn berhu_kkt(
    sigma: &CovarianceMatrix,
    lambda: f64,
    delta: f64,
    w: &DVector<f64>,
    gamma: f64,
) -> f64 {
    let grad = sigma.mul_vec(w) * 2.0; // 2Σw = 2w_iσ_i² + z_i
    let mut worst = (w.sum() - 1.0).abs();
    for i in 0..w.len() {
        let wi = w[i];
        let r = if wi == 0.0 {
            ((grad[i] - gamma).abs() - lambda).max(0.0)
        } else if wi.abs() < delta {
            (grad[i] - gamma + lambda * wi.signum()).abs()
        } else {
            (grad[i] - gamma + lambda * wi / delta).abs()
        };
        if r > worst {
            worst = r;
        }
    }
    worst
}
