//! Block coordinate-wise descent for the adaptive group portfolio.
//!
//! The penalty is the covariance-weighted Euclidean norm per group,
//! `λ₁ Σ_l ‖w_l‖_{l2,A_ll}` with `‖w_l‖_{l2,A_ll} = √(w_l' A_ll w_l)` and
//! `A_ll` the diagonal covariance block of group `l`. With
//! `B_l = 2 Σ_{j≠l} A_lj w_j` and
//! `Λ_l(γ) = ‖A_ll^{-1/2}(γ1 - B_l)‖`, the block update is
//!
//! ```text
//!     w_l <- 1/2 (1 - λ₁/Λ_l(γ))₊ A_ll⁻¹ (γ1 - B_l)
//! ```
//!
//! which zeroes the whole group exactly when `Λ_l(γ) <= λ₁`. The weights are
//! nonlinear in γ, so γ is updated by minimizing the squared budget residual
//! `(1 - Σ_l 1' w_l(γ))²` with a bracketed golden-section search.

use nalgebra::{DMatrix, DVector};

use crate::cd_solver::{direct_solve_threshold, direct_unpenalized, finish};
use crate::model::{
    CovarianceMatrix, Error, GroupStructure, PenaltyConfig, Result, Solution, SolverOptions,
};

/// Relative eigenvalue floor below which a diagonal block is rejected.
const EIG_FLOOR_RTOL: f64 = 1e-10;

/// Symmetric inverse square root `A^{-1/2} = Q diag(λ_k^{-1/2}) Q'` of a
/// symmetric positive-definite matrix.
pub fn inverse_sqrt_sym(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    decompose(a).map(|(_, inv_sqrt)| inv_sqrt)
}

/// Returns (A⁻¹, A^{-1/2}) from one eigendecomposition.
fn decompose(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = a.nrows();
    if a.ncols() != k || k == 0 {
        return Err(Error::DimensionMismatch(format!(
            "block is {}x{}",
            k,
            a.ncols()
        )));
    }
    let eig = a.clone().symmetric_eigen();
    let max_eig = eig
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let floor = EIG_FLOOR_RTOL * max_eig.max(0.0);
    let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(min_eig > floor) {
        return Err(Error::NotPositiveDefinite { min_eig, floor });
    }
    let q = &eig.eigenvectors;
    let mut inv = DMatrix::zeros(k, k);
    let mut inv_sqrt = DMatrix::zeros(k, k);
    for m in 0..k {
        let li = 1.0 / eig.eigenvalues[m];
        let ls = 1.0 / eig.eigenvalues[m].sqrt();
        let col = q.column(m);
        for i in 0..k {
            for j in 0..k {
                inv[(i, j)] += li * col[i] * col[j];
                inv_sqrt[(i, j)] += ls * col[i] * col[j];
            }
        }
    }
    // symmetrize exactly against accumulation-order noise
    for m in [&mut inv, &mut inv_sqrt] {
        for i in 0..k {
            for j in (i + 1)..k {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    }
    Ok((inv, inv_sqrt))
}

struct GroupBlock {
    idx: Vec<usize>,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    a_inv_sqrt: DMatrix<f64>,
    /// A⁻¹ 1
    a_inv_ones: DVector<f64>,
    /// 1' A⁻¹ 1
    ones_a_inv_ones: f64,
}

/// Cached per-group factorizations plus the current coupling vectors
/// `B_l = 2 Σ_{j≠l} A_lj w_j`.
pub struct GroupWorkspace {
    blocks: Vec<GroupBlock>,
    b: Vec<DVector<f64>>,
    min_variance: f64,
}

impl GroupWorkspace {
    /// Eigendecomposes every diagonal block once; `B` starts at zero.
    pub fn new(sigma: &CovarianceMatrix, grouping: &GroupStructure) -> Result<Self> {
        if grouping.p() != sigma.p() {
            return Err(Error::DimensionMismatch(format!(
                "grouping covers {} assets, covariance has {}",
                grouping.p(),
                sigma.p()
            )));
        }
        let mut blocks = Vec::with_capacity(grouping.len());
        let mut b = Vec::with_capacity(grouping.len());
        for (l, g) in grouping.groups().iter().enumerate() {
            let k = g.len();
            let mut a = DMatrix::zeros(k, k);
            for (bi, &i) in g.iter().enumerate() {
                for (bj, &j) in g.iter().enumerate() {
                    a[(bi, bj)] = sigma.matrix()[(i, j)];
                }
            }
            let (a_inv, a_inv_sqrt) = decompose(&a).map_err(|_| Error::IllConditionedGroup(l))?;
            let a_inv_ones = &a_inv * DVector::from_element(k, 1.0);
            let ones_a_inv_ones = a_inv_ones.sum();
            blocks.push(GroupBlock {
                idx: g.clone(),
                a,
                a_inv,
                a_inv_sqrt,
                a_inv_ones,
                ones_a_inv_ones,
            });
            b.push(DVector::zeros(k));
        }
        Ok(Self {
            blocks,
            b,
            min_variance: sigma.min_variance(),
        })
    }

    pub fn group_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn group_indices(&self, l: usize) -> &[usize] {
        &self.blocks[l].idx
    }

    pub fn a_inv(&self, l: usize) -> &DMatrix<f64> {
        &self.blocks[l].a_inv
    }

    pub fn a_inv_sqrt(&self, l: usize) -> &DMatrix<f64> {
        &self.blocks[l].a_inv_sqrt
    }

    pub fn b(&self, l: usize) -> &DVector<f64> {
        &self.b[l]
    }

    pub fn set_b(&mut self, l: usize, b: DVector<f64>) {
        assert_eq!(b.len(), self.blocks[l].idx.len());
        self.b[l] = b;
    }

    /// Recomputes every `B_l` from full weights: `B_l = 2((Σw)_l - A_ll w_l)`.
    pub fn refresh_b(&mut self, sigma: &CovarianceMatrix, w: &DVector<f64>) {
        let y = sigma.mul_vec(w);
        for l in 0..self.blocks.len() {
            self.b[l] = self.b_from_product(l, &y, w);
        }
    }

    fn b_from_product(&self, l: usize, y: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let blk = &self.blocks[l];
        let k = blk.idx.len();
        let wl = DVector::from_iterator(k, blk.idx.iter().map(|&i| w[i]));
        let awl = &blk.a * &wl;
        DVector::from_fn(k, |r, _| 2.0 * (y[blk.idx[r]] - awl[r]))
    }
}

/// Group test statistic `Λ_l(γ) = ‖A_ll^{-1/2}(γ1 - B_l)‖₂`; the group is
/// zero exactly when `Λ_l(γ) <= λ₁`.
pub fn lambda_l(gamma: f64, ws: &GroupWorkspace, l: usize) -> f64 {
    let blk = &ws.blocks[l];
    let k = blk.idx.len();
    let v = DVector::from_fn(k, |i, _| gamma - ws.b[l][i]);
    (&blk.a_inv_sqrt * v).norm()
}

/// Block update `1/2 (1 - λ₁/Λ_l(γ))₊ A_ll⁻¹(γ1 - B_l)`; the zero vector when
/// `Λ_l(γ) <= λ₁`.
pub fn update_group(l: usize, gamma: f64, ws: &GroupWorkspace, lambda1: f64) -> DVector<f64> {
    let blk = &ws.blocks[l];
    let k = blk.idx.len();
    let lam = lambda_l(gamma, ws, l);
    if lambda1 > 0.0 && lam <= lambda1 {
        return DVector::zeros(k);
    }
    let factor = if lambda1 == 0.0 {
        1.0
    } else {
        1.0 - lambda1 / lam
    };
    let v = DVector::from_fn(k, |i, _| gamma - ws.b[l][i]);
    (&blk.a_inv * v) * (0.5 * factor)
}

/// Budget sum `h(γ) = Σ_l 1' w_l(γ)`, evaluated from the per-group scalars
/// a = 1'A⁻¹1, b = 1'A⁻¹B, c = B'A⁻¹B (so Λ² = aγ² - 2bγ + c).
fn budget_sum(coeffs: &[(f64, f64, f64)], lambda1: f64, gamma: f64) -> f64 {
    let mut h = 0.0;
    for &(a, b, c) in coeffs {
        let q = (a * gamma * gamma - 2.0 * b * gamma + c).max(0.0);
        let lam = q.sqrt();
        if lambda1 > 0.0 {
            if lam <= lambda1 {
                continue;
            }
            h += 0.5 * (1.0 - lambda1 / lam) * (a * gamma - b);
        } else {
            h += 0.5 * (a * gamma - b);
        }
    }
    h
}

/// Squared budget residual `g(γ) = (1 - h(γ))²`.
fn budget_residual_sq(coeffs: &[(f64, f64, f64)], lambda1: f64, gamma: f64) -> f64 {
    let r = 1.0 - budget_sum(coeffs, lambda1, gamma);
    r * r
}

/// γ update of the block algorithm: finds the global minimizer of the squared
/// budget residual `g(γ) = (1 - h(γ))²`.
///
/// `h(γ) = Σ_l 1' w_l(γ)` is continuous, piecewise smooth, and nondecreasing:
/// where a group is active its slope is `a/2 - (λ₁/2) u'(γ)` with
/// `u = (aγ-b)/Λ` and `0 <= u' <= a/Λ` by Cauchy-Schwarz, so the slope is at
/// least `(a/2)(1 - λ₁/Λ) > 0`; inactive groups contribute 0. Both tails are
/// strictly increasing, so `h(γ) = 1` always has a root and sign-bracketed
/// bisection locates the global minimum of `g` exactly (golden-section on `g`
/// stalls on the flat plateaus that inactive regions create). A final check
/// keeps `g(returned) <= g(gamma_prev)`.
pub fn solve_gamma(ws: &GroupWorkspace, lambda1: f64, gamma_prev: f64) -> f64 {
    let coeffs: Vec<(f64, f64, f64)> = ws
        .blocks
        .iter()
        .zip(ws.b.iter())
        .map(|(blk, b)| {
            let a = blk.ones_a_inv_ones;
            let bb = blk.a_inv_ones.dot(b);
            let c = (&blk.a_inv * b).dot(b);
            (a, bb, c)
        })
        .collect();
    let h = |gamma: f64| budget_sum(&coeffs, lambda1, gamma);
    let g = |gamma: f64| budget_residual_sq(&coeffs, lambda1, gamma);

    let width0 = 1.0 + 2.0 * ws.min_variance + gamma_prev.abs();
    let mut lo = gamma_prev - width0;
    let mut hi = gamma_prev + width0;
    let mut bracketed = true;
    for k in 0..202 {
        if h(lo) <= 1.0 {
            break;
        }
        lo -= hi - lo;
        if k == 201 {
            bracketed = false;
        }
    }
    for k in 0..202 {
        if h(hi) >= 1.0 {
            break;
        }
        hi += hi - lo;
        if k == 201 {
            bracketed = false;
        }
    }
    if !bracketed {
        // h is unbounded in both tails, so this is numerical exhaustion only
        return gamma_prev;
    }
    for _ in 0..200 {
        if (hi - lo).abs() <= 1e-15 * (1.0 + lo.abs() + hi.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if h(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = if (h(lo) - 1.0).abs() <= (h(hi) - 1.0).abs() {
        lo
    } else {
        hi
    };
    if g(root) <= g(gamma_prev) {
        root
    } else {
        gamma_prev
    }
}

/// Solves the adaptive group portfolio problem by block coordinate descent.
pub fn solve_adaptive_group(
    sigma: &CovarianceMatrix,
    grouping: &GroupStructure,
    lambda1: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    solve_adaptive_group_from(sigma, grouping, lambda1, opts, None)
}

/// As [`solve_adaptive_group`], optionally warm-started.
pub fn solve_adaptive_group_from(
    sigma: &CovarianceMatrix,
    grouping: &GroupStructure,
    lambda1: f64,
    opts: &SolverOptions,
    initial: Option<&DVector<f64>>,
) -> Result<Solution> {
    opts.validate()?;
    let penalty = PenaltyConfig::AdaptiveGroup {
        lambda1,
        grouping: grouping.clone(),
    };
    let p = sigma.p();
    penalty.validate(p)?;

    let max_sd = sigma.max_variance().max(0.0).sqrt();
    if lambda1 * max_sd < direct_solve_threshold(sigma) {
        return direct_unpenalized(sigma, &penalty, opts);
    }

    let mut ws = GroupWorkspace::new(sigma, grouping)?;
    let mut w = match initial {
        Some(w0) => {
            if w0.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "{} initial weights for {} assets",
                    w0.len(),
                    p
                )));
            }
            w0.clone()
        }
        None => DVector::from_element(p, 1.0 / p as f64),
    };
    let mut gamma = crate::cd_solver::initial_gamma(sigma, lambda1 * max_sd);
    let mut y = sigma.mul_vec(&w);

    let mut loop_converged = false;
    let mut inflations = 0usize;
    let mut sweeps = 0usize;
    for sweep in 1..=opts.max_sweeps {
        sweeps = sweep;
        if sweep % 50 == 0 {
            y = sigma.mul_vec(&w);
        }
        let mut max_dw = 0.0f64;
        for l in 0..ws.group_count() {
            let bl = ws.b_from_product(l, &y, &w);
            ws.set_b(l, bl);
            let new_wl = update_group(l, gamma, &ws, lambda1);
            let idx = ws.group_indices(l).to_vec();
            for (r, &i) in idx.iter().enumerate() {
                let delta = new_wl[r] - w[i];
                if delta != 0.0 {
                    w[i] = new_wl[r];
                    let col = sigma.row_slice(i);
                    for jj in 0..p {
                        y[jj] += col[jj] * delta;
                    }
                    if delta.abs() > max_dw {
                        max_dw = delta.abs();
                    }
                }
            }
        }
        let all_zero = w.iter().all(|&wi| wi == 0.0);
        if all_zero {
            // recovery: let the γ search look for an activating multiplier
            // first (with B = 0 it sees the bare Λ_l(γ) = |γ|√(1'A⁻¹1)
            // thresholds); inflate only if it finds nothing
            ws.refresh_b(sigma, &w);
            let gamma_search = solve_gamma(&ws, lambda1, gamma);
            if gamma_search != gamma {
                gamma = gamma_search;
                continue;
            }
            inflations += 1;
            if inflations > 60 {
                break;
            }
            gamma *= 1.5;
            continue;
        }
        ws.refresh_b(sigma, &w);
        let gamma_new = solve_gamma(&ws, lambda1, gamma);
        let budget = (w.sum() - 1.0).abs();
        let dgamma = (gamma_new - gamma).abs();
        gamma = gamma_new;
        if max_dw <= opts.coord_tol
            && budget <= opts.budget_tol
            && dgamma <= opts.coord_tol * (1.0 + gamma.abs())
        {
            loop_converged = true;
            break;
        }
    }

    finish(sigma, &penalty, opts, w, gamma, sweeps, loop_converged)
}

/// Stationarity residual of the group problem: active blocks must satisfy
/// `2(Σw)_l + λ₁ A_ll w_l / ‖w_l‖_{A_ll} - γ1 = 0` (the w-space image of the
/// reparameterized conditions); zero blocks must pass `Λ_l(γ) <= λ₁`. The
/// budget violation joins the max.
pub(crate) fn group_kkt(
    sigma: &CovarianceMatrix,
    grouping: &GroupStructure,
    lambda1: f64,
    w: &DVector<f64>,
    gamma: f64,
) -> Result<f64> {
    let ws = {
        let mut ws = GroupWorkspace::new(sigma, grouping)?;
        ws.refresh_b(sigma, w);
        ws
    };
    let y = sigma.mul_vec(w);
    let mut worst = (w.sum() - 1.0).abs();
    for (l, blk) in ws.blocks.iter().enumerate() {
        let k = blk.idx.len();
        let wl = DVector::from_iterator(k, blk.idx.iter().map(|&i| w[i]));
        if wl.iter().all(|&v| v == 0.0) {
            let r = (lambda_l(gamma, &ws, l) - lambda1).max(0.0);
            if r > worst {
                worst = r;
            }
        } else {
            let awl = &blk.a * &wl;
            let norm_a = awl.dot(&wl).max(0.0).sqrt();
            for r_i in 0..k {
                let r = (2.0 * y[blk.idx[r_i]] + lambda1 * awl[r_i] / norm_a - gamma).abs();
                if r > worst {
                    worst = r;
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cd_solver;
    use crate::test_support::{random_spd, seeded_rng};
    use nalgebra::{dmatrix, dvector};
    use rand::prelude::*;

    #[test]
    fn inverse_sqrt_identity() {
        let m = inverse_sqrt_sym(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(m, DMatrix::identity(3, 3));
    }

    #[test]
    fn inverse_sqrt_diagonal() {
        let m = inverse_sqrt_sym(&dmatrix![4.0, 0.0; 0.0, 9.0]).unwrap();
        assert!((m[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((m[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(m[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn inverse_sqrt_random_squares_to_inverse() {
        let mut rng = seeded_rng(31);
        for _ in 0..10 {
            let k = rng.random_range(2..6);
            let a = random_spd(&mut rng, k, 0.3, 3.0);
            let m = inverse_sqrt_sym(a.matrix()).unwrap();
            let mm = &m * &m;
            let inv = a.matrix().clone().lu().try_inverse().unwrap();
            let scale = inv.amax();
            for i in 0..k {
                for j in 0..k {
                    assert!((mm[(i, j)] - inv[(i, j)]).abs() <= 1e-9 * scale);
                }
            }
            // M·M·A ≈ I
            let ident = &mm * a.matrix();
            for i in 0..k {
                for j in 0..k {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((ident[(i, j)] - expect).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn inverse_sqrt_rejects_singular() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        assert!(matches!(
            inverse_sqrt_sym(&m),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    fn workspace_for(sigma: &CovarianceMatrix, groups: Vec<Vec<usize>>) -> GroupWorkspace {
        let grouping = GroupStructure::new(groups, sigma.p()).unwrap();
        GroupWorkspace::new(sigma, &grouping).unwrap()
    }

    #[test]
    fn lambda_l_zero_when_b_matches_gamma() {
        let sigma = CovarianceMatrix::from_matrix(DMatrix::identity(4, 4)).unwrap();
        let mut ws = workspace_for(&sigma, vec![vec![0, 1, 2, 3]]);
        let gamma = 1.7;
        ws.set_b(0, DVector::from_element(4, gamma));
        assert_eq!(lambda_l(gamma, &ws, 0), 0.0);
    }

    #[test]
    fn lambda_l_identity_block_constant_vector() {
        let sigma = CovarianceMatrix::from_matrix(DMatrix::identity(4, 4)).unwrap();
        let ws = workspace_for(&sigma, vec![vec![0, 1, 2, 3]]);
        // B = 0, A = I, K = 4, γ = 2 -> ‖2·1‖ = 4
        assert!((lambda_l(2.0, &ws, 0) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn lambda_l_matches_quadratic_form() {
        let mut rng = seeded_rng(32);
        for _ in 0..10 {
            let k = rng.random_range(2..5);
            let a = random_spd(&mut rng, k, 0.3, 3.0);
            let mut full = DMatrix::zeros(k, k);
            full.copy_from(a.matrix());
            let sigma = CovarianceMatrix::from_matrix(full).unwrap();
            let mut ws = workspace_for(&sigma, vec![(0..k).collect()]);
            let b = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
            ws.set_b(0, b.clone());
            let gamma = rng.random_range(-1.0..2.0);
            let direct = {
                let v = DVector::from_fn(k, |i, _| gamma - b[i]);
                (ws.a_inv(0) * &v).dot(&v).sqrt()
            };
            assert!((lambda_l(gamma, &ws, 0) - direct).abs() <= 1e-10);
        }
    }

    #[test]
    fn update_group_thresholds_to_zero() {
        let sigma = CovarianceMatrix::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let mut ws = workspace_for(&sigma, vec![vec![0, 1, 2]]);
        ws.set_b(0, DVector::zeros(3));
        // Λ(γ=1) = √3 < λ₁ = 2
        let w = update_group(0, 1.0, &ws, 2.0);
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn update_group_lambda_zero_is_block_newton() {
        let mut rng = seeded_rng(33);
        let a = random_spd(&mut rng, 3, 0.3, 3.0);
        let mut full = DMatrix::zeros(3, 3);
        full.copy_from(a.matrix());
        let sigma = CovarianceMatrix::from_matrix(full).unwrap();
        let mut ws = workspace_for(&sigma, vec![vec![0, 1, 2]]);
        let b = DVector::from_fn(3, |_, _| rng.random_range(-0.5..0.5));
        ws.set_b(0, b.clone());
        let gamma = 0.9;
        let w = update_group(0, gamma, &ws, 0.0);
        let v = DVector::from_fn(3, |i, _| gamma - b[i]);
        let expect = (ws.a_inv(0) * v) * 0.5;
        for i in 0..3 {
            assert!((w[i] - expect[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn update_group_singleton_reduces_to_soft_threshold() {
        // K=1 block (σ²): update equals ST(γ - B, λ₁σ)/(2σ²)
        let s2 = 2.2f64;
        let sigma = CovarianceMatrix::from_matrix(dmatrix![s2, 0.0; 0.0, 1.0]).unwrap();
        let mut ws = workspace_for(&sigma, vec![vec![0], vec![1]]);
        for (gamma, b0, lambda1) in [(1.0, 0.2, 0.3), (0.5, -0.4, 0.2), (0.1, 0.0, 5.0)] {
            ws.set_b(0, dvector![b0]);
            let got = update_group(0, gamma, &ws, lambda1)[0];
            let expect = cd_solver::soft_threshold(gamma - b0, lambda1 * s2.sqrt()) / (2.0 * s2);
            assert!(
                (got - expect).abs() < 1e-14,
                "γ={} B={} λ1={}",
                gamma,
                b0,
                lambda1
            );
        }
    }

    #[test]
    fn update_group_norm_identity() {
        let mut rng = seeded_rng(34);
        for _ in 0..10 {
            let k = rng.random_range(2..5);
            let a = random_spd(&mut rng, k, 0.3, 3.0);
            let mut full = DMatrix::zeros(k, k);
            full.copy_from(a.matrix());
            let sigma = CovarianceMatrix::from_matrix(full).unwrap();
            let mut ws = workspace_for(&sigma, vec![(0..k).collect()]);
            let b = DVector::from_fn(k, |_, _| rng.random_range(-0.5..0.5));
            ws.set_b(0, b);
            let gamma = rng.random_range(0.5..3.0);
            let lambda1 = 0.4;
            let lam = lambda_l(gamma, &ws, 0);
            let w = update_group(0, gamma, &ws, lambda1);
            if lam > lambda1 {
                let norm_a = (ws.blocks[0].a.clone() * &w).dot(&w).sqrt();
                assert!((norm_a - (lam - lambda1) / 2.0).abs() <= 1e-9);
            } else {
                assert!(w.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn solve_gamma_matches_linear_closed_form_when_unpenalized() {
        let mut rng = seeded_rng(35);
        let sigma = random_spd(&mut rng, 6, 0.3, 2.0);
        let grouping = GroupStructure::new(vec![vec![0, 1], vec![2, 3], vec![4, 5]], 6).unwrap();
        let mut ws = GroupWorkspace::new(&sigma, &grouping).unwrap();
        let w = DVector::from_fn(6, |_, _| rng.random_range(-0.3..0.6));
        ws.refresh_b(&sigma, &w);
        // λ₁ = 0: γ solves Σ_l ½(a_l γ - b_l) = 1
        let mut a_sum = 0.0;
        let mut b_sum = 0.0;
        for l in 0..3 {
            a_sum += ws.blocks[l].ones_a_inv_ones;
            b_sum += ws.blocks[l].a_inv_ones.dot(ws.b(l));
        }
        let closed = (1.0 + 0.5 * b_sum) / (0.5 * a_sum);
        let got = solve_gamma(&ws, 0.0, 1.0);
        assert!((got - closed).abs() <= 1e-8 * (1.0 + closed.abs()));
    }

    #[test]
    fn solve_gamma_single_group_closed_form() {
        let mut rng = seeded_rng(36);
        let a = random_spd(&mut rng, 4, 0.3, 2.0);
        let mut full = DMatrix::zeros(4, 4);
        full.copy_from(a.matrix());
        let sigma = CovarianceMatrix::from_matrix(full).unwrap();
        let grouping = GroupStructure::new(vec![vec![0, 1, 2, 3]], 4).unwrap();
        let mut ws = GroupWorkspace::new(&sigma, &grouping).unwrap();
        ws.set_b(0, DVector::zeros(4));
        let lambda1 = 0.7;
        // budget: ½(γ a - λ₁ √a) = 1 with a = 1'A⁻¹1
        let a_scalar = ws.blocks[0].ones_a_inv_ones;
        let closed = (2.0 + lambda1 * a_scalar.sqrt()) / a_scalar;
        let got = solve_gamma(&ws, lambda1, closed * 3.0);
        assert!((got - closed).abs() <= 1e-8 * (1.0 + closed.abs()));
        // squared residual at the root is ~0
        let coeffs = vec![(
            a_scalar,
            ws.blocks[0].a_inv_ones.dot(ws.b(0)),
            (ws.a_inv(0) * ws.b(0)).dot(ws.b(0)),
        )];
        assert!(budget_residual_sq(&coeffs, lambda1, got) <= 1e-16);
    }

    #[test]
    fn solve_matches_unregularized_closed_form_at_lambda_zero() {
        let mut rng = seeded_rng(37);
        let sigma = random_spd(&mut rng, 6, 0.3, 2.0);
        let grouping = GroupStructure::new(vec![vec![0, 1, 2], vec![3, 4, 5]], 6).unwrap();
        let sol = solve_adaptive_group(&sigma, &grouping, 0.0, &SolverOptions::default()).unwrap();
        let exact = cd_solver::solve(
            &sigma,
            &PenaltyConfig::ElasticNet {
                lambda: 0.0,
                alpha: 1.0,
            },
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(sol.converged);
        for i in 0..6 {
            assert!((sol.weights[i] - exact.weights[i]).abs() <= 1e-7);
        }
    }

    #[test]
    fn solve_singleton_groups_match_weighted_l1_with_eta_sigma() {
        let mut rng = seeded_rng(38);
        for lambda1 in [0.3, 0.8] {
            let p = 6;
            let sigma = random_spd(&mut rng, p, 0.3, 2.0);
            let grouping = GroupStructure::singletons(p);
            let group = solve_adaptive_group(&sigma, &grouping, lambda1, &SolverOptions::default())
                .unwrap();
            let eta = DVector::from_fn(p, |i, _| sigma.variance(i).sqrt());
            let weighted = cd_solver::solve(
                &sigma,
                &PenaltyConfig::WeightedL1 {
                    lambda: lambda1,
                    eta,
                },
                &SolverOptions::default(),
            )
            .unwrap();
            assert!(group.converged && weighted.converged);
            for i in 0..p {
                assert!(
                    (group.weights[i] - weighted.weights[i]).abs() <= 1e-6,
                    "λ1={} i={}: {} vs {}",
                    lambda1,
                    i,
                    group.weights[i],
                    weighted.weights[i]
                );
            }
        }
    }

    #[test]
    fn solve_block_diagonal_decouples() {
        let mut rng = seeded_rng(39);
        let a1 = random_spd(&mut rng, 3, 0.4, 2.0);
        let a2 = random_spd(&mut rng, 3, 0.4, 2.0);
        let mut m = DMatrix::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = a1.matrix()[(i, j)];
                m[(i + 3, j + 3)] = a2.matrix()[(i, j)];
            }
        }
        let sigma = CovarianceMatrix::from_matrix(m).unwrap();
        let grouping = GroupStructure::new(vec![vec![0, 1, 2], vec![3, 4, 5]], 6).unwrap();
        let lambda1 = 0.5;
        let sol =
            solve_adaptive_group(&sigma, &grouping, lambda1, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        // With A_12 = 0, each block solves its own subproblem at the shared γ:
        // recomputing the block update with B_l = 0 must reproduce the block.
        let mut ws = GroupWorkspace::new(&sigma, &grouping).unwrap();
        for l in 0..2 {
            ws.set_b(l, DVector::zeros(3));
            let expect = update_group(l, sol.gamma, &ws, lambda1);
            for (r, &i) in grouping.group(l).iter().enumerate() {
                assert!((sol.weights[i] - expect[r]).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn converged_solutions_certify_zero_and_active_groups() {
        let mut rng = seeded_rng(40);
        let opts = SolverOptions::default();
        for _ in 0..10 {
            let p = 8;
            let sigma = random_spd(&mut rng, p, 0.3, 2.5);
            let grouping =
                GroupStructure::new(vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]], p)
                    .unwrap();
            let lambda1 = rng.random_range(0.2..1.2);
            let sol = solve_adaptive_group(&sigma, &grouping, lambda1, &opts).unwrap();
            assert!(sol.converged, "λ1={}", lambda1);
            assert!((sol.weights.sum() - 1.0).abs() <= 1e-8);
            assert!(sol.kkt_residual <= 1e-6 * (1.0 + sigma.max_variance()));
            let mut ws = GroupWorkspace::new(&sigma, &grouping).unwrap();
            ws.refresh_b(&sigma, &sol.weights);
            for l in 0..grouping.len() {
                let wl: Vec<f64> = grouping.group(l).iter().map(|&i| sol.weights[i]).collect();
                let lam = lambda_l(sol.gamma, &ws, l);
                if wl.iter().all(|&v| v == 0.0) {
                    assert!(lam <= lambda1 + 1e-6, "zero group {} certificate", l);
                } else {
                    assert!(lam >= lambda1 - 1e-6, "active group {} certificate", l);
                    // norm identity
                    let blk_a = &ws.blocks[l].a;
                    let wv = DVector::from_vec(wl);
                    let norm_a = (blk_a * &wv).dot(&wv).sqrt();
                    assert!((norm_a - (lam - lambda1) / 2.0).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn converges_across_scale_and_penalty_extremes() {
        // covariance scales spanning percent² to fraction² units, against
        // penalties from negligible to far beyond the activation thresholds
        let mut rng = seeded_rng(77);
        let grouping = GroupStructure::new(vec![vec![0, 1], vec![2, 3], vec![4, 5]], 6).unwrap();
        for scale in [1.0, 1e-2, 1e-4, 1e-7] {
            for lambda1 in [0.01, 0.5, 1.5, 10.0] {
                let sigma = random_spd(&mut rng, 6, 0.3, 2.0).scaled(scale).unwrap();
                let sol =
                    solve_adaptive_group(&sigma, &grouping, lambda1, &SolverOptions::default())
                        .unwrap();
                assert!(sol.converged, "scale={} λ1={}", scale, lambda1);
                assert!((sol.weights.sum() - 1.0).abs() <= 1e-8);
                assert!(sol.kkt_residual <= 1e-6 * (1.0 + sigma.max_variance()));
            }
        }
    }

    #[test]
    fn rejects_singular_block() {
        let m = dmatrix![1.0, 1.0, 0.0; 1.0, 1.0, 0.0; 0.0, 0.0, 1.0];
        let sigma = CovarianceMatrix::from_matrix(m).unwrap();
        let grouping = GroupStructure::new(vec![vec![0, 1], vec![2]], 3).unwrap();
        assert!(matches!(
            solve_adaptive_group(&sigma, &grouping, 1.0, &SolverOptions::default()),
            Err(Error::IllConditionedGroup(0))
        ));
    }
}
