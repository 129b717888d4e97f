//! Small dense-matrix helpers for the synthetic problem suite.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::Vector;

pub(crate) fn to_dvector(v: &Vector) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub(crate) fn from_dvector(v: &DVector<f64>) -> Vector {
    Vector::from(v.as_slice())
}

pub(crate) fn matvec(m: &DMatrix<f64>, v: &Vector) -> Vector {
    from_dvector(&(m * to_dvector(v)))
}

pub(crate) fn tr_matvec(m: &DMatrix<f64>, v: &Vector) -> Vector {
    from_dvector(&m.tr_mul(&to_dvector(v)))
}

pub(crate) fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub(crate) fn uniform_vector<R: Rng>(rng: &mut R, dim: usize) -> Vector {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `rows x cols` matrix with orthonormal columns (or rows, if wide), times `scale`.
/// Every singular value equals `scale`.
pub(crate) fn scaled_orthogonal<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    scale: f64,
) -> DMatrix<f64> {
    if rows >= cols {
        let q = uniform_matrix(rng, rows, cols).qr().q();
        q * scale
    } else {
        let q = uniform_matrix(rng, cols, rows).qr().q();
        q.transpose() * scale
    }
}

pub(crate) fn max_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Extreme eigenvalues `(min, max)` of the Gram matrix `m^T m / n`.
pub(crate) fn gram_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let gram = m.tr_mul(m) / m.nrows() as f64;
    let eig = gram.symmetric_eigenvalues();
    (eig.min().max(0.0), eig.max())
}
