//! Binary quantized tensor trains.
//!
//! A grid vector of length `N = 2^L` is viewed as an `L`-way `2 × … × 2`
//! tensor and stored as a chain of small cores. Zero-based index `p` has
//! binary digits `j_k` with `p = Σ_k j_k 2^k`, and core `k` handles digit `k`.
//! Storage is `O(L r²)` and all arithmetic below is polynomial in the ranks.

mod build;
pub mod guard;
mod io;
mod matrix;
mod svd;
mod train;
mod vector;

pub use matrix::{QttMatrix, DENSE_MATRIX_LIMIT};
pub use vector::{QttVector, Tolerance, DENSE_LIMIT};

/// TT-SVD of a dense vector.
pub fn fold(dense: &[f64], tol: Tolerance) -> crate::Result<QttVector> {
    QttVector::fold(dense, tol)
}

/// Dense materialization.
pub fn unfold(x: &QttVector) -> crate::Result<Vec<f64>> {
    x.unfold()
}

/// `A x` rounded to `tol`.
pub fn matvec(a: &QttMatrix, x: &QttVector, tol: Tolerance) -> crate::Result<QttVector> {
    a.matvec(x, tol)
}
