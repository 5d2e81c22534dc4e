//! Sum conditional mutual information, its gradient, and the trace lower bound.
//!
//! The gradient is taken with respect to `conj(P)`; the first-order change of
//! the objective along `Δ` is `2 Re <G, Δ>` with `<A, B> = sum conj(A) B`.

use faer::{Mat, MatRef};
use num_complex::Complex64 as c64;

use crate::channel_model::ChannelStats;
use crate::error::{Result, dim};
use crate::linalg::{self, CMat};

/// One term `alpha * diag(beta) ⊗ diag(gamma)`.
#[derive(Clone, Debug)]
pub struct KronTerm {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Splits a diagonal of length `n_p * n_rx` (index `p * n_rx + l`) into
/// `min(n_p, n_rx)` Kronecker terms via the SVD of its `n_rx x n_p` reshape.
pub fn kron_diag_svd(d: &[f64], n_p: usize, n_rx: usize) -> Result<Vec<KronTerm>> {
    if d.len() != n_p * n_rx {
        return Err(dim(format!("diagonal of length {} is not {n_p} x {n_rx}", d.len())));
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(crate::error::Error::NonFinite("diagonal entries".into()));
    }
    let r = Mat::<f64>::from_fn(n_rx, n_p, |l, p| d[p * n_rx + l]);
    let svd = r
        .thin_svd()
        .map_err(|e| crate::error::Error::Factorization(format!("svd: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let mut out = Vec::with_capacity(n_p.min(n_rx));
    for i in 0..n_p.min(n_rx) {
        let mut beta: Vec<f64> = (0..n_p).map(|p| v[(p, i)]).collect();
        let mut gamma: Vec<f64> = (0..n_rx).map(|l| u[(l, i)]).collect();
        let big = beta.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            beta.iter_mut().for_each(|x| *x = -*x);
            gamma.iter_mut().for_each(|x| *x = -*x);
        }
        out.push(KronTerm { alpha: s[i], beta, gamma });
    }
    Ok(out)
}

pub(crate) fn check_dims(p: MatRef<'_, c64>, stats: &[ChannelStats]) -> Result<()> {
    for s in stats {
        if s.cov_tx.nrows() != p.ncols() {
            return Err(dim(format!(
                "pilot has {} columns, covariance is {}",
                p.ncols(),
                s.cov_tx.nrows()
            )));
        }
    }
    Ok(())
}

pub(crate) fn eigenvalues(c: MatRef<'_, c64>) -> Result<Vec<f64>> {
    Ok(linalg::eigh_desc(c)?.0.into_iter().map(|x| x.max(0.0)).collect())
}

/// `P C P^H` eigendecomposition plus `C P^H`.
pub(crate) struct TxSide {
    pub s: Vec<f64>,
    pub v: CMat,
    /// `P C`.
    pub pc: CMat,
}

pub(crate) fn tx_side(p: MatRef<'_, c64>, c: MatRef<'_, c64>) -> Result<TxSide> {
    let pc = p * c;
    let mut a = &pc * p.adjoint();
    linalg::hermitize(&mut a);
    let (s, v) = linalg::eigh_desc(a.as_ref())?;
    Ok(TxSide { s: s.into_iter().map(|x| x.max(0.0)).collect(), v, pc })
}

/// Factored objective: `sum_j sum_{i,l} ln(1 + s_{j,i} t_{j,l} / σ²)`.
pub fn sum_cmi(p: MatRef<'_, c64>, stats: &[ChannelStats], noise_var: f64) -> Result<f64> {
    check_dims(p, stats)?;
    let mut total = 0.0;
    for st in stats {
        let t = eigenvalues(st.cov_rx.as_ref())?;
        let tx = tx_side(p, st.cov_tx.as_ref())?;
        total += cmi_from_eigs(&tx.s, &t, noise_var);
    }
    Ok(total)
}

pub(crate) fn cmi_from_eigs(s: &[f64], t: &[f64], noise_var: f64) -> f64 {
    let mut v = 0.0;
    for &si in s {
        for &tl in t {
            v += (si * tl / noise_var).ln_1p();
        }
    }
    v
}

/// Same objective through the explicit `(P ⊗ I) C (P ⊗ I)^H`.
pub fn sum_cmi_dense(p: MatRef<'_, c64>, stats: &[ChannelStats], noise_var: f64) -> Result<f64> {
    check_dims(p, stats)?;
    let mut total = 0.0;
    for st in stats {
        let a = linalg::kron(p, linalg::identity(st.n_rx()).as_ref());
        let c = st.full_covariance();
        let m = &a * &c * a.adjoint();
        let mut m = linalg::scaled(m.as_ref(), 1.0 / noise_var) + linalg::identity(a.nrows());
        linalg::hermitize(&mut m);
        total += linalg::logdet_hpd(m.as_ref())?;
    }
    Ok(total)
}

/// Gradient assembled from the per-user eigendecompositions and the
/// Kronecker-diagonal SVD of `(I + S ⊗ T / σ²)^{-1}`.
pub fn cmi_gradient(p: MatRef<'_, c64>, stats: &[ChannelStats], noise_var: f64) -> Result<CMat> {
    check_dims(p, stats)?;
    let rx: Vec<Vec<f64>> = stats
        .iter()
        .map(|s| eigenvalues(s.cov_rx.as_ref()))
        .collect::<Result<_>>()?;
    Ok(gradient_with_rx(p, stats, &rx, noise_var)?.0)
}

/// Returns the gradient and the objective at `p`.
pub(crate) fn gradient_with_rx(
    p: MatRef<'_, c64>,
    stats: &[ChannelStats],
    rx: &[Vec<f64>],
    noise_var: f64,
) -> Result<(CMat, f64)> {
    let (n_p, n_tx) = p.shape();
    let mut g = Mat::<c64>::zeros(n_p, n_tx);
    let mut obj = 0.0;
    for (st, t) in stats.iter().zip(rx) {
        let n_rx = t.len();
        let tx = tx_side(p, st.cov_tx.as_ref())?;
        obj += cmi_from_eigs(&tx.s, t, noise_var);
        let d: Vec<f64> = (0..n_p * n_rx)
            .map(|k| 1.0 / (1.0 + tx.s[k / n_rx] * t[k % n_rx] / noise_var))
            .collect();
        let mut w = vec![0.0; n_p];
        for term in kron_diag_svd(&d, n_p, n_rx)? {
            let tr: f64 = term.gamma.iter().zip(t).map(|(a, b)| a * b).sum();
            for (wp, b) in w.iter_mut().zip(&term.beta) {
                *wp += term.alpha * b * tr / noise_var;
            }
        }
        let vw = Mat::from_fn(n_p, n_p, |i, j| tx.v[(i, j)] * w[j]);
        g += &vw * (tx.v.adjoint() * &tx.pc);
    }
    Ok((g, obj))
}

/// Closed form `sum_j V diag(sum_l t_l / (σ² + s t_l)) V^H P C` without the
/// Kronecker SVD, used to cross-check [`cmi_gradient`].
pub fn cmi_gradient_direct(p: MatRef<'_, c64>, stats: &[ChannelStats], noise_var: f64) -> Result<CMat> {
    check_dims(p, stats)?;
    let (n_p, n_tx) = p.shape();
    let mut g = Mat::<c64>::zeros(n_p, n_tx);
    for st in stats {
        let t = eigenvalues(st.cov_rx.as_ref())?;
        let tx = tx_side(p, st.cov_tx.as_ref())?;
        let w: Vec<f64> = tx
            .s
            .iter()
            .map(|&s| t.iter().map(|&tl| tl / (noise_var + s * tl)).sum())
            .collect();
        let vw = Mat::from_fn(n_p, n_p, |i, j| tx.v[(i, j)] * w[j]);
        g += &vw * (tx.v.adjoint() * &tx.pc);
    }
    Ok(g)
}

/// `sum_j ln det(I + tr(C_rx) P C_tx P^H / σ²)`.
pub fn lower_bound(p: MatRef<'_, c64>, stats: &[ChannelStats], noise_var: f64) -> Result<f64> {
    check_dims(p, stats)?;
    let n_p = p.nrows();
    let mut total = 0.0;
    for st in stats {
        let tau = linalg::trace(st.cov_rx.as_ref()).re;
        let a = p * &st.cov_tx * p.adjoint();
        let mut m = linalg::scaled(a.as_ref(), tau / noise_var) + linalg::identity(n_p);
        linalg::hermitize(&mut m);
        total += linalg::logdet_hpd(m.as_ref())?;
    }
    Ok(total)
}

/// `sum_j (1/σ²) (I + τ_j P C_j P^H / σ²)^{-1} P τ_j C_j`.
pub fn lower_bound_map(p: MatRef<'_, c64>, stats: &[ChannelStats], noise_var: f64) -> Result<CMat> {
    check_dims(p, stats)?;
    let (n_p, n_tx) = p.shape();
    let mut g = Mat::<c64>::zeros(n_p, n_tx);
    for st in stats {
        let tau = linalg::trace(st.cov_rx.as_ref()).re;
        let ptc = linalg::scaled((p * &st.cov_tx).as_ref(), tau);
        let mut m = linalg::scaled((&ptc * p.adjoint()).as_ref(), 1.0 / noise_var) + linalg::identity(n_p);
        linalg::hermitize(&mut m);
        let x = linalg::solve_hpd(m.as_ref(), ptc.as_ref())?;
        g += linalg::scaled(x.as_ref(), 1.0 / noise_var);
    }
    Ok(g)
}

fn kkt(f: MatRef<'_, c64>, p: MatRef<'_, c64>) -> f64 {
    let pp = p.norm_l2().powi(2);
    let lambda = linalg::inner(f, p).re / pp;
    let lp = linalg::scaled(p, lambda);
    (f.to_owned() - &lp).norm_l2() / lp.norm_l2()
}

/// `||F(P) - λP|| / ||λP||` with `λ = Re<F(P), P> / ||P||²`, `F` the gradient.
pub fn kkt_residual_full(p: MatRef<'_, c64>, stats: &[ChannelStats], noise_var: f64) -> Result<f64> {
    Ok(kkt(cmi_gradient(p, stats, noise_var)?.as_ref(), p))
}

/// Same residual for the lower-bound stationarity map.
pub fn kkt_residual_lower_bound(p: MatRef<'_, c64>, stats: &[ChannelStats], noise_var: f64) -> Result<f64> {
    Ok(kkt(lower_bound_map(p, stats, noise_var)?.as_ref(), p))
}
