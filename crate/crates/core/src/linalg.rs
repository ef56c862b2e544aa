//! Complex dense linear-algebra helpers shared across the crate.
//!
//! Matrices are `nalgebra` dense types over `Complex<f64>`. Complex vectors
//! cross the real-valued network boundary as `[Re; Im]` stacks.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Unitary `t x t` DFT matrix, entry `(a, b) = exp(-i 2 pi a b / t) / sqrt(t)`.
pub fn unitary_dft(t: usize) -> CMat {
    let scale = 1.0 / (t as f64).sqrt();
    DMatrix::from_fn(t, t, |a, b| {
        let phase = -2.0 * std::f64::consts::PI * ((a * b) % t) as f64 / t as f64;
        C64::from_polar(scale, phase)
    })
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// `[Re; Im]` stacking of a complex vector.
pub fn stack_real(v: &CVec) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * v.len());
    out.extend(v.iter().map(|z| z.re));
    out.extend(v.iter().map(|z| z.im));
    out
}

/// Inverse of [`stack_real`]; `x.len()` must be even.
pub fn unstack_real(x: &[f64]) -> CVec {
    let n = x.len() / 2;
    CVec::from_fn(n, |i, _| c64(x[i], x[n + i]))
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c64(0.5, 0.0)
}

/// Eigen-decomposition of a Hermitian matrix: `(eigenvalues, eigenvectors)`
/// with `m = U diag(values) U^H`.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(hermitian_part(m));
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigen(m)
        .0
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(m: &CMat) -> Result<Cholesky<C64, nalgebra::Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| {
        Error::Factorization(format!(
            "{}x{} matrix is not positive definite",
            m.nrows(),
            m.ncols()
        ))
    })
}

/// A factor `L` with `L L^H = m` for a Hermitian PSD matrix. Uses Cholesky
/// when it succeeds and falls back to `U sqrt(max(diag, 0))` otherwise, which
/// covers singular covariances.
pub fn psd_factor(m: &CMat) -> Result<CMat> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Factorization("non-finite covariance entry".into()));
    }
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch.l());
    }
    let (vals, vecs) = hermitian_eigen(m);
    let scale = vals
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    if vals.iter().any(|&v| v < -1e-8 * scale) {
        return Err(Error::Factorization(
            "covariance has a significantly negative eigenvalue".into(),
        ));
    }
    let mut l = vecs;
    for (j, v) in vals.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    Ok(l)
}

/// Squared Euclidean norm of a complex vector.
#[inline]
pub fn norm_sqr(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Unconjugated bilinear product `a^T b`.
#[inline]
pub fn dot_t(a: &CVec, b: &CVec) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dft_is_unitary() {
        let f = unitary_dft(6);
        let g = f.adjoint() * &f;
        assert!(max_abs_diff(&g, &CMat::identity(6, 6)) < 1e-13);
    }

    #[test]
    fn stacking_round_trip() {
        let v = CVec::from_vec(vec![c64(1.0, -2.0), c64(0.5, 3.0)]);
        let x = stack_real(&v);
        assert_eq!(x, vec![1.0, 0.5, -2.0, 3.0]);
        assert_eq!(unstack_real(&x), v);
    }

    #[test]
    fn psd_factor_handles_singular_matrix() {
        let zero = CMat::zeros(3, 3);
        let l = psd_factor(&zero).unwrap();
        assert!(l.iter().all(|z| z.norm() == 0.0));

        let u = CVec::from_vec(vec![c64(1.0, 1.0), c64(0.0, 2.0), c64(-1.0, 0.0)]);
        let rank_one = &u * u.adjoint();
        let l = psd_factor(&rank_one).unwrap();
        assert!(max_abs_diff(&(&l * l.adjoint()), &rank_one) < 1e-10);
    }
}
