//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    let mut s: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    DVector::from_vec(s)
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    if s.is_empty() || s[0] == 0.0 {
        return 0;
    }
    let thresh = rel_tol * s[0];
    s.iter().filter(|&&v| v > thresh).count()
}

/// Moore-Penrose pseudoinverse through the SVD.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = singular_values(m);
    let eps = if s.is_empty() {
        0.0
    } else {
        s[0] * f64::EPSILON * m.nrows().max(m.ncols()) as f64
    };
    m.clone()
        .pseudo_inverse(eps)
        .expect("pseudo_inverse with nonnegative eps")
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

/// Checks symmetry to `1e-10` and strict positivity of the spectrum.
pub fn check_spd(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if !is_symmetric(m, 1e-10) || m.nrows() == 0 || min_sym_eigenvalue(m) <= 0.0 {
        return Err(Error::NotPositiveDefinite(what));
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    check_spd(m, what)?;
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite(what))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Rank of the controllability matrix `[B AB ... A^{n-1}B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    numerical_rank(&ctrb, rel_tol)
}

/// Solution of the discrete algebraic Riccati equation by value iteration.
///
/// Returns `(K, P)` with the feedback convention `u = K x`, i.e.
/// `K = -(R + B'PB)^{-1} B'PA`.
pub fn dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut p = q.clone();
    for _ in 0..max_iter {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let chol = gram
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("R + B'PB"))?;
        let gain = chol.solve(&(&btp * a));
        let next =
            symmetrize(&(q + a.transpose() * &p * a - a.transpose() * &btp.transpose() * &gain));
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let diff = (&next - &p).amax();
        p = next;
        if diff <= tol * p.amax().max(1.0) {
            let btp = b.transpose() * &p;
            let chol = (r + &btp * b)
                .cholesky()
                .ok_or(Error::NotPositiveDefinite("R + B'PB"))?;
            let k = -chol.solve(&(&btp * a));
            return Ok((k, p));
        }
    }
    Err(Error::RiccatiDiverged(max_iter))
}

/// Solves `A' X A - X + Q = 0` for Schur-stable `A` via the Kronecker form.
pub fn dlyap(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let at = a.transpose();
    // vec(A' X A) = (A' kron A') vec(X) in column-major vec.
    let kron = at.kronecker(&at);
    let lhs = DMatrix::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(q.as_slice());
    let x = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Invalid("singular Lyapunov operator".into()))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}
