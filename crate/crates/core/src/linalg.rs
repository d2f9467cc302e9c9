//! Small shared linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::model::{Error, Result};

/// Solves the equality-constrained quadratic program
///
/// ```text
///     minimize    w' Q w - b' w
///     subject to  1' w = 1
/// ```
///
/// via its KKT system `[2Q, -1; 1', 0] [w; γ] = [b; 1]`, returning `(w, γ)`.
/// `Q` must be symmetric; the system is solved by LU with partial pivoting.
pub fn solve_budget_qp(q: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let n = q.nrows();
    debug_assert_eq!(q.ncols(), n);
    debug_assert_eq!(b.len(), n);
    let mut kkt = DMatrix::zeros(n + 1, n + 1);
    for j in 0..n {
        for i in 0..n {
            kkt[(i, j)] = 2.0 * q[(i, j)];
        }
    }
    for i in 0..n {
        kkt[(i, n)] = -1.0;
        kkt[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        rhs[i] = b[i];
    }
    rhs[n] = 1.0;
    let lu = kkt.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("budget-constrained KKT system".into()))?;
    let w = DVector::from_iterator(n, sol.iter().take(n).copied());
    Ok((w, sol[n]))
}

/// Median of a nonempty slice; NaNs are not expected.
pub fn median(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median input must be orderable"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn budget_qp_diagonal_closed_form() {
        // min w'diag(1,4)w s.t. 1'w = 1 -> w ∝ (1, 1/4)
        let q = dmatrix![1.0, 0.0; 0.0, 4.0];
        let (w, gamma) = solve_budget_qp(&q, &DVector::zeros(2)).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-14);
        assert!((w[1] - 0.2).abs() < 1e-14);
        // stationarity: 2*1*0.8 = γ
        assert!((gamma - 1.6).abs() < 1e-14);
    }

    #[test]
    fn budget_qp_singular_detected() {
        // [2Q, -1; 1', 0] with Q = 0 has two identical rows.
        let q = DMatrix::zeros(2, 2);
        assert!(solve_budget_qp(&q, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
