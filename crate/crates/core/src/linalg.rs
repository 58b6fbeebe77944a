//! Small complex linear-algebra helpers shared by the design modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

/// Largest condition number accepted for Gram-matrix inversions.
pub const MAX_GRAM_CONDITION: f64 = 1e8;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn real(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Inner product `a^H b`.
#[inline]
pub fn inner(a: &CVec, b: &CVec) -> C64 {
    a.dotc(b)
}

#[inline]
pub fn norm_sq(a: &CVec) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Stack column vectors into an `n × k` matrix.
pub fn hstack(columns: &[CVec], n_rows: usize) -> CMat {
    let mut m = CMat::zeros(n_rows, columns.len());
    for (j, col) in columns.iter().enumerate() {
        m.set_column(j, col);
    }
    m
}

/// Frobenius norm squared.
pub fn fro_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Hermitian part `(M + M^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * real(0.5)
}

/// Inverse of a Hermitian positive-definite Gram matrix with a condition-number guard.
///
/// Fails with [`Error::IllConditionedChannel`] instead of regularizing, because the
/// zero-forcing identities built on top of it are exact contracts.
pub fn guarded_gram_inverse(gram: &CMat) -> Result<CMat> {
    let herm = hermitian_part(gram);
    let eig = SymmetricEigen::new(herm.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min > 0.0) {
        return Err(Error::IllConditionedChannel(f64::INFINITY));
    }
    let cond = max / min;
    if cond > MAX_GRAM_CONDITION {
        return Err(Error::IllConditionedChannel(cond));
    }
    let chol = hpd_cholesky(herm).ok_or(Error::IllConditionedChannel(cond))?;
    Ok(hermitian_part(&chol.inverse()))
}

/// Cholesky factorization that fails unless `m` is numerically Hermitian positive definite.
///
/// The plain complex factorization takes complex square roots of the pivots and
/// so never reports indefiniteness; here every pivot must be real and positive.
pub fn hpd_cholesky(m: CMat) -> Option<Cholesky<C64, Dyn>> {
    let chol = m.cholesky()?;
    let ok = chol.l_dirty().diagonal().iter().all(|d| d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re);
    ok.then_some(chol)
}

/// Real trace of a (Hermitian) matrix.
pub fn trace_re(m: &CMat) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

pub fn is_finite_vec(v: &CVec) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Entrywise `exp(j·arg(z))`; zero entries map to 1.
pub fn unit_phase(z: C64) -> C64 {
    let r = z.norm();
    if r > 0.0 {
        z / r
    } else {
        real(1.0)
    }
}
