//! Small dense helpers on top of faer.

use std::hash::{Hash, Hasher};

use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};

pub type CMat = Mat<c64>;

pub fn zeros(r: usize, c: usize) -> CMat {
    Mat::zeros(r, c)
}

pub fn identity(n: usize) -> CMat {
    Mat::identity(n, n)
}

pub fn scaled(a: MatRef<'_, c64>, s: f64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

/// Replace `a` by `(a + a^H) / 2`.
pub fn hermitize(a: &mut CMat) {
    let n = a.nrows();
    for j in 0..n {
        a[(j, j)] = c64::new(a[(j, j)].re, 0.0);
        for i in (j + 1)..n {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}

pub fn trace(a: MatRef<'_, c64>) -> c64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// `sum conj(a) * b` over all entries.
pub fn inner(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> c64 {
    assert_eq!(a.shape(), b.shape());
    let mut s = c64::new(0.0, 0.0);
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)].conj() * b[(i, j)];
        }
    }
    s
}

pub fn frob(a: MatRef<'_, c64>) -> f64 {
    a.norm_l2()
}

pub fn max_abs_diff(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

pub fn hermitian_defect(a: MatRef<'_, c64>) -> f64 {
    max_abs_diff(a, a.adjoint().to_owned().as_ref())
}

/// Largest singular value.
pub fn spectral_norm(a: MatRef<'_, c64>) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0.0);
    }
    let s = a
        .singular_values()
        .map_err(|e| Error::Factorization(format!("svd: {e:?}")))?;
    Ok(s.first().copied().unwrap_or(0.0))
}

pub fn kron(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Column-stacking vectorization.
pub fn vec_of(a: MatRef<'_, c64>) -> Vec<c64> {
    let mut v = Vec::with_capacity(a.nrows() * a.ncols());
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            v.push(a[(i, j)]);
        }
    }
    v
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &[c64], rows: usize, cols: usize) -> CMat {
    assert_eq!(v.len(), rows * cols);
    Mat::from_fn(rows, cols, |i, j| v[j * rows + i])
}

pub fn col_vec(v: &[c64]) -> CMat {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// Multiply each column by a unit phase so its largest-magnitude entry
/// (first one on ties) is real and positive.
pub fn phase_normalize_columns(u: &mut CMat) {
    for j in 0..u.ncols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..u.nrows() {
            let a = u[(i, j)].norm();
            if a > best_abs * (1.0 + 1e-12) {
                best = i;
                best_abs = a;
            }
        }
        if best_abs > 0.0 {
            let ph = u[(best, j)].conj() / best_abs;
            for i in 0..u.nrows() {
                u[(i, j)] *= ph;
            }
            u[(best, j)] = c64::new(u[(best, j)].re, 0.0);
        }
    }
}

/// Hermitian eigendecomposition with eigenvalues in descending order.
/// Ties keep the solver's index order reversed deterministically, and
/// eigenvectors are phase-normalized.
pub fn eigh_desc(a: MatRef<'_, c64>) -> Result<(Vec<f64>, CMat)> {
    let n = a.nrows();
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("eigen: {e:?}")))?;
    let s = e.S().column_vector();
    let u = e.U();
    let vals: Vec<f64> = (0..n).map(|i| s[i].re).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigenvalues".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
    let mut vecs = Mat::from_fn(n, n, |r, c| u[(r, idx[c])]);
    phase_normalize_columns(&mut vecs);
    Ok((idx.iter().map(|&i| vals[i]).collect(), vecs))
}

/// `F` with `F F^H = a` for a Hermitian PSD `a`, built from the eigendecomposition
/// so rank-deficient input is fine. Fails if an eigenvalue is below `-tol`.
pub fn psd_factor(a: MatRef<'_, c64>, tol: f64) -> Result<CMat> {
    let (vals, vecs) = eigh_desc(a)?;
    let n = vals.len();
    let scale = vals.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if let Some(v) = vals.iter().find(|&&v| v < -tol * scale) {
        return Err(Error::Factorization(format!(
            "matrix is indefinite (eigenvalue {v:e})"
        )));
    }
    Ok(Mat::from_fn(n, n, |i, j| vecs[(i, j)] * vals[j].max(0.0).sqrt()))
}

/// Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(a: MatRef<'_, c64>) -> Result<CMat> {
    let l = a
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("cholesky: {e:?}")))?;
    Ok(l.L().to_owned())
}

/// log det of a Hermitian positive definite matrix.
pub fn logdet_hpd(a: MatRef<'_, c64>) -> Result<f64> {
    let l = cholesky(a)?;
    Ok((0..l.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// Solve `a x = b` with `a` Hermitian positive definite.
pub fn solve_hpd(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Result<CMat> {
    let l = cholesky(a)?;
    let mut x = b.to_owned();
    l.as_ref().solve_lower_triangular_in_place(x.as_mut());
    l.adjoint().solve_upper_triangular_in_place(x.as_mut());
    Ok(x)
}

/// Inverse of a lower triangular matrix.
pub fn lower_inverse(l: MatRef<'_, c64>) -> CMat {
    let mut x = identity(l.nrows());
    l.solve_lower_triangular_in_place(x.as_mut());
    x
}

/// Stable hash of a matrix's bit pattern.
pub fn fingerprint(m: MatRef<'_, c64>) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    m.shape().hash(&mut h);
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)].re.to_bits().hash(&mut h);
            m[(i, j)].im.to_bits().hash(&mut h);
        }
    }
    h.finish()
}
