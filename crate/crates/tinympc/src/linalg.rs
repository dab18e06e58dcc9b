//! Instrumented dense linear-algebra helpers.
//!
//! Every matrix factorization or inversion in this crate goes through this
//! module so that the per-thread [`factorization_count`] stays accurate. The
//! online solver loop must never move that counter; the offline cache
//! builder, the validator, and the oracle may.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

thread_local! {
    static FACTORIZATION_COUNT: Cell<u64> = const { Cell::new(0) };
}

/// Number of matrix factorizations/inversions performed by this thread.
pub fn factorization_count() -> u64 {
    FACTORIZATION_COUNT.with(|c| c.get())
}

fn note_factorization() {
    FACTORIZATION_COUNT.with(|c| c.set(c.get() + 1));
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    note_factorization();
    nalgebra::linalg::Cholesky::new(m.clone()).map(|c| c.inverse())
}

/// Solves `m x = rhs` for symmetric positive-definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    note_factorization();
    nalgebra::linalg::Cholesky::new(m.clone()).map(|c| c.solve(rhs))
}

/// Solves a general square system `m x = rhs` via LU with partial pivoting.
pub fn lu_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    note_factorization();
    m.clone().lu().solve(rhs)
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    note_factorization();
    m.clone().singular_values()
}

/// Eigenvalues of a symmetric matrix (unordered).
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    note_factorization();
    m.clone().symmetric_eigenvalues()
}

/// Full eigendecomposition of a symmetric matrix: `(values, vectors)` with
/// eigenvectors in the columns, unordered.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    note_factorization();
    let eig = nalgebra::linalg::SymmetricEigen::new(m.clone());
    (eig.eigenvalues, eig.eigenvectors)
}

/// Spectral radius (largest eigenvalue modulus) of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    note_factorization();
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|ev| ev.norm())
        .fold(0.0, f64::max)
}

/// `max_k |a_k - b_k|` over two equally sized slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `max_k |a_k|`.
pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// True when every entry is finite.
pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_tracks_factorizations() {
        let before = factorization_count();
        let m = DMatrix::<f64>::identity(3, 3);
        let inv = spd_inverse(&m).unwrap();
        assert_eq!(inv, DMatrix::identity(3, 3));
        assert_eq!(factorization_count(), before + 1);
        let _ = singular_values(&m);
        assert_eq!(factorization_count(), before + 2);
    }

    #[test]
    fn spectral_radius_of_rotation_scaled() {
        // 2D rotation scaled by 0.5 has both eigenvalues at modulus 0.5.
        let theta: f64 = 0.7;
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                0.5 * theta.cos(),
                -0.5 * theta.sin(),
                0.5 * theta.sin(),
                0.5 * theta.cos(),
            ],
        );
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn slice_helpers() {
        assert_eq!(max_abs_diff(&[1.0, 2.0], &[1.5, 2.0]), 0.5);
        assert_eq!(max_abs(&[-3.0, 2.0]), 3.0);
        assert!(all_finite(&[0.0, 1.0]));
        assert!(!all_finite(&[0.0, f64::NAN]));
    }
}
