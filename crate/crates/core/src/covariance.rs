//! Sample covariance estimation over rolling return windows, plus the
//! missing-data rule: a missing return is replaced by the equally weighted
//! mean of the other assets observed in the same period.

use nalgebra::DMatrix;

use crate::model::{CovarianceMatrix, Error, Result, ReturnsPanel};

/// Divisor convention for sample moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Divisor {
    /// Divide by τ − 1 (unbiased).
    #[default]
    Unbiased,
    /// Divide by τ.
    MaximumLikelihood,
}

impl Divisor {
    pub fn value(self, n: usize) -> f64 {
        match self {
            Divisor::Unbiased => (n - 1) as f64,
            Divisor::MaximumLikelihood => n as f64,
        }
    }
}

/// Replaces every missing cell by the arithmetic mean of the returns observed
/// in the same row. Fails on a fully missing row.
pub fn impute_missing(panel: &ReturnsPanel) -> Result<ReturnsPanel> {
    let (t, p) = (panel.periods(), panel.assets());
    let mut filled = panel.returns().clone();
    for row in 0..t {
        let mut sum = 0.0;
        let mut n = 0usize;
        for col in 0..p {
            if !panel.is_missing(row, col) {
                sum += filled[(row, col)];
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::FullyMissingRow(row));
        }
        if n == p {
            continue;
        }
        let mean = sum / n as f64;
        for col in 0..p {
            if panel.is_missing(row, col) {
                filled[(row, col)] = mean;
            }
        }
    }
    ReturnsPanel::new(
        panel.dates().to_vec(),
        panel.asset_ids().to_vec(),
        filled,
        vec![false; t * p],
    )
}

/// Sample covariance of the window `[start, start + len)` with the default
/// unbiased divisor τ − 1.
pub fn sample_covariance(
    panel: &ReturnsPanel,
    start: usize,
    len: usize,
) -> Result<CovarianceMatrix> {
    sample_covariance_with(panel, start, len, Divisor::Unbiased)
}

/// Sample covariance with an explicit divisor convention.
pub fn sample_covariance_with(
    panel: &ReturnsPanel,
    start: usize,
    len: usize,
    divisor: Divisor,
) -> Result<CovarianceMatrix> {
    let (t, p) = (panel.periods(), panel.assets());
    if len < 2 {
        return Err(Error::InvalidInput(format!("window length {} < 2", len)));
    }
    if start.checked_add(len).map_or(true, |end| end > t) {
        return Err(Error::WindowOutOfBounds {
            start,
            len,
            rows: t,
        });
    }
    for row in start..start + len {
        for col in 0..p {
            if panel.is_missing(row, col) {
                return Err(Error::MissingInWindow(row));
            }
        }
    }
    let r = panel.returns();
    let mut means = vec![0.0f64; p];
    for col in 0..p {
        let mut s = 0.0;
        for row in start..start + len {
            s += r[(row, col)];
        }
        means[col] = s / len as f64;
    }
    let denom = divisor.value(len);
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let mut s = 0.0;
            for row in start..start + len {
                s += (r[(row, i)] - means[i]) * (r[(row, j)] - means[j]);
            }
            let v = s / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    CovarianceMatrix::from_sample(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn panel_from_rows(rows: &[&[f64]]) -> ReturnsPanel {
        let t = rows.len();
        let p = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ReturnsPanel::fully_observed(
            (0..t).map(|i| format!("2000{:02}", i + 1)).collect(),
            (0..p).map(|i| format!("a{}", i)).collect(),
            DMatrix::from_row_slice(t, p, &flat),
        )
        .unwrap()
    }

    #[test]
    fn impute_row_mean_of_available() {
        let m = DMatrix::from_row_slice(1, 3, &[0.02, 0.0, 0.04]);
        let panel = ReturnsPanel::new(
            vec!["200001".into()],
            vec!["a".into(), "b".into(), "c".into()],
            m,
            vec![false, true, false],
        )
        .unwrap();
        let filled = impute_missing(&panel).unwrap();
        assert_eq!(filled.returns()[(0, 1)], 0.03);
        assert_eq!(filled.returns()[(0, 0)], 0.02);
        assert_eq!(filled.returns()[(0, 2)], 0.04);
        assert!(!filled.has_missing());
    }

    #[test]
    fn impute_identity_on_complete_rows() {
        let panel = panel_from_rows(&[&[0.01, 0.02], &[0.03, 0.04]]);
        let filled = impute_missing(&panel).unwrap();
        assert_eq!(filled.returns(), panel.returns());
    }

    #[test]
    fn impute_single_source_mean() {
        let m = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.05]);
        let panel = ReturnsPanel::new(
            vec!["200001".into()],
            vec!["a".into(), "b".into(), "c".into()],
            m,
            vec![true, true, false],
        )
        .unwrap();
        let filled = impute_missing(&panel).unwrap();
        for col in 0..3 {
            assert_eq!(filled.returns()[(0, col)], 0.05);
        }
    }

    #[test]
    fn impute_fails_on_fully_missing_row() {
        let m = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let panel = ReturnsPanel::new(
            vec!["200001".into()],
            vec!["a".into(), "b".into()],
            m,
            vec![true, true],
        )
        .unwrap();
        assert!(matches!(
            impute_missing(&panel),
            Err(Error::FullyMissingRow(0))
        ));
    }

    #[test]
    fn covariance_of_constant_returns_is_zero() {
        let panel = panel_from_rows(&[&[0.01, 0.03], &[0.01, 0.03], &[0.01, 0.03]]);
        let cov = sample_covariance(&panel, 0, 3).unwrap();
        assert!(cov.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn covariance_two_asset_hand_value() {
        // a = (0.0, 0.02), b = (0.02, 0.0), divisor τ-1 = 1
        let panel = panel_from_rows(&[&[0.0, 0.02], &[0.02, 0.0]]);
        let cov = sample_covariance(&panel, 0, 2).unwrap();
        let e = 2e-4;
        assert!((cov.matrix()[(0, 0)] - e).abs() < 1e-19);
        assert!((cov.matrix()[(1, 1)] - e).abs() < 1e-19);
        assert!((cov.matrix()[(0, 1)] + e).abs() < 1e-19);
    }

    #[test]
    fn covariance_ml_divisor() {
        let panel = panel_from_rows(&[&[0.0, 0.02], &[0.02, 0.0]]);
        let cov = sample_covariance_with(&panel, 0, 2, Divisor::MaximumLikelihood).unwrap();
        assert!((cov.matrix()[(0, 0)] - 1e-4).abs() < 1e-19);
    }

    #[test]
    fn covariance_duplicated_asset_is_rank_one() {
        let panel = panel_from_rows(&[&[0.01, 0.01], &[-0.02, -0.02], &[0.03, 0.03]]);
        let cov = sample_covariance(&panel, 0, 3).unwrap();
        let m = cov.matrix();
        assert_eq!(m[(0, 0)], m[(0, 1)]);
        assert_eq!(m[(0, 0)], m[(1, 1)]);
        assert!(m[(0, 0)] > 0.0);
    }

    #[test]
    fn covariance_window_errors() {
        let panel = panel_from_rows(&[&[0.0, 0.02], &[0.02, 0.0], &[0.01, 0.01]]);
        assert!(matches!(
            sample_covariance(&panel, 2, 2),
            Err(Error::WindowOutOfBounds { .. })
        ));
        assert!(sample_covariance(&panel, 0, 1).is_err());

        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.02, 0.02, 0.0]);
        let with_gap = ReturnsPanel::new(
            vec!["200001".into(), "200002".into()],
            vec!["a".into(), "b".into()],
            m,
            vec![false, true, false, false],
        )
        .unwrap();
        assert!(matches!(
            sample_covariance(&with_gap, 0, 2),
            Err(Error::MissingInWindow(0))
        ));
    }

    #[test]
    fn covariance_symmetric_psd_on_random_panels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let t = rng.random_range(5..40);
            let p = rng.random_range(2..8);
            let data: Vec<f64> = (0..t * p).map(|_| rng.random_range(-0.2..0.2)).collect();
            let panel = ReturnsPanel::fully_observed(
                (0..t).map(|i| format!("{:06}", 190001 + i)).collect(),
                (0..p).map(|i| format!("a{}", i)).collect(),
                DMatrix::from_row_slice(t, p, &data),
            )
            .unwrap();
            let cov = sample_covariance(&panel, 0, t).unwrap();
            let m = cov.matrix();
            for i in 0..p {
                for j in 0..p {
                    assert_eq!(m[(i, j)], m[(j, i)]);
                }
            }
            let min_eig = m.clone().symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-12 * cov.trace().max(1.0));
        }
    }

    #[test]
    fn covariance_invariant_to_per_asset_mean_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t = 24;
        let p = 4;
        let data: Vec<f64> = (0..t * p).map(|_| rng.random_range(-0.1..0.1)).collect();
        let base = DMatrix::from_row_slice(t, p, &data);
        let mut shifted = base.clone();
        for row in 0..t {
            shifted[(row, 2)] += 0.05;
        }
        let dates: Vec<String> = (0..t).map(|i| format!("{:06}", 190001 + i)).collect();
        let ids: Vec<String> = (0..p).map(|i| format!("a{}", i)).collect();
        let c0 = sample_covariance(
            &ReturnsPanel::fully_observed(dates.clone(), ids.clone(), base).unwrap(),
            0,
            t,
        )
        .unwrap();
        let c1 = sample_covariance(
            &ReturnsPanel::fully_observed(dates, ids, shifted).unwrap(),
            0,
            t,
        )
        .unwrap();
        let scale = c0.matrix().amax().max(1.0);
        for (a, b) in c0.matrix().iter().zip(c1.matrix().iter()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn covariance_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let t = 18;
        let p = 3;
        let data: Vec<f64> = (0..t * p).map(|_| rng.random_range(-0.05..0.05)).collect();
        let base = DMatrix::from_row_slice(t, p, &data);
        let scaled = &base * 3.0;
        let dates: Vec<String> = (0..t).map(|i| format!("{:06}", 190001 + i)).collect();
        let ids: Vec<String> = (0..p).map(|i| format!("a{}", i)).collect();
        let c0 = sample_covariance(
            &ReturnsPanel::fully_observed(dates.clone(), ids.clone(), base).unwrap(),
            0,
            t,
        )
        .unwrap();
        let c1 = sample_covariance(
            &ReturnsPanel::fully_observed(dates, ids, scaled).unwrap(),
            0,
            t,
        )
        .unwrap();
        for (a, b) in c0.matrix().iter().zip(c1.matrix().iter()) {
            assert!((9.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
