//! Small dense helpers shared by the backends.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// max |A - A^dag|
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigenvalues of the Hermitian part of `m`, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(hermitize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Principal square root of a density matrix. Eigenvalues below zero are
/// clipped and the spectrum renormalized to unit trace; the second field is
/// the most negative eigenvalue seen before clipping.
pub fn psd_sqrt(m: &CMatrix) -> (CMatrix, f64) {
    let eig = SymmetricEigen::new(hermitize(m));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let v = &eig.eigenvectors;
    let n = m.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (k, &lam) in clipped.iter().enumerate() {
        let s = (lam / total).sqrt();
        if s == 0.0 {
            continue;
        }
        let col = v.column(k);
        out += (col * col.adjoint()).scale(s);
    }
    (out, min)
}

/// Trace norm distance 0.5 * ||A - B||_1 between Hermitian matrices.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    0.5 * hermitian_eigenvalues(&(a - b))
        .iter()
        .map(|x| x.abs())
        .sum::<f64>()
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// max |G^dag G - 1|
pub fn unitarity_defect(g: &CMatrix) -> f64 {
    let n = g.nrows();
    max_abs(&(g.adjoint() * g - CMatrix::identity(n, n)))
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}
