//! Small dense helpers on top of nalgebra.
//!
//! Block-diagonal quantities (`R̂`, `B̂`, `χ`) are never materialized; their
//! norms are the max/min over the per-mode blocks computed here.

use crate::{Error, Mat, Result};

/// `acc += w·x`.
pub fn add_scaled(acc: &mut Mat, w: f64, x: &Mat) {
    debug_assert_eq!(acc.shape(), x.shape());
    for (a, b) in acc.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += w * b;
    }
}

/// Replaces `m` by `(m + mᵀ)/2` in place.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix (only the symmetric part is used).
pub fn sym_eigenvalues(m: &Mat) -> nalgebra::DVector<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues()
}

pub fn sym_min_eig(m: &Mat) -> f64 {
    sym_eigenvalues(m).min()
}

pub fn sym_max_eig(m: &Mat) -> f64 {
    sym_eigenvalues(m).max()
}

/// Spectral norm `‖m‖₂` of an arbitrary matrix.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.tr_mul(m)
    };
    libm::sqrt(sym_max_eig(&gram).max(0.0))
}

/// Smallest singular value of a square matrix.
pub fn sigma_min(m: &Mat) -> f64 {
    let gram = m.tr_mul(m);
    libm::sqrt(sym_min_eig(&gram).max(0.0))
}

/// `tr(a·b)` without forming the product.
pub fn trace_of_product(a: &Mat, b: &Mat) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Solves `psi · X = rhs` for symmetric positive definite `psi`.
pub fn spd_solve(psi: &Mat, rhs: &Mat) -> Result<Mat> {
    if let Some(chol) = psi.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    psi.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular("k×k curvature block is singular".into()))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_factor(m: &Mat) -> Option<Mat> {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.cholesky().map(|c| c.l())
}
