// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector};

/// Diagonal jitter added to every normal-equation system.
pub(crate) const NORMAL_EQUATION_JITTER: f64 = 1e-10;

/// Solves `(A + jitter I) x = b` for a symmetric positive semi-definite `A`
/// given in row-major order. The jitter is raised tenfold until the
/// Cholesky factorisation succeeds.
pub(crate) fn solve_spd(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = b.len();
    debug_assert_eq!(a.len(), d * d);
    let rhs = DVector::from_column_slice(b);
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(1.0, f64::max);
    let mut jitter = NORMAL_EQUATION_JITTER;
    loop {
        let mut m = DMatrix::from_row_slice(d, d, a);
        for i in 0..d {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return chol.solve(&rhs).iter().copied().collect();
        }
        jitter *= 10.0;
        if jitter > scale {
            return vec![0.0; d];
        }
    }
}
