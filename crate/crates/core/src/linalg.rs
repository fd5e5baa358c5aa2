//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= rel_tol * scale))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m` with a unit eigenvector.
pub fn min_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    (val, eig.eigenvectors.column(idx).into_owned())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    min_eigenpair(m).0
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue modulus of a general square matrix.
///
/// Eigenvalues come from nalgebra's real Schur decomposition (shifted QR
/// iteration), which handles complex-conjugate pairs directly.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert_eq!(m.nrows(), m.ncols(), "spectral radius needs a square matrix");
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `‖m‖∞` as the largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}
