//! Seeded random-instance generators shared by the unit, property, and
//! acceptance test suites.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::model::CovarianceMatrix;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random symmetric positive-definite matrix with eigenvalues drawn uniformly
/// from `[eig_min, eig_max]`.
pub fn random_spd(rng: &mut ChaCha8Rng, p: usize, eig_min: f64, eig_max: f64) -> CovarianceMatrix {
    let g = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let qr = g.qr();
    let q = qr.q();
    let eigs = DVector::from_fn(p, |_, _| rng.random_range(eig_min..eig_max));
    let mut m = DMatrix::zeros(p, p);
    for k in 0..p {
        let col = q.column(k);
        for i in 0..p {
            for j in 0..p {
                m[(i, j)] += eigs[k] * col[i] * col[j];
            }
        }
    }
    // exact symmetry regardless of accumulation order
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    CovarianceMatrix::from_matrix(m).expect("constructed SPD matrix must validate")
}

/// Random weight vector on the budget hyperplane (entries may be negative).
pub fn random_budget_point(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    let mut w = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    let shift = (w.sum() - 1.0) / p as f64;
    for i in 0..p {
        w[i] -= shift;
    }
    w
}
