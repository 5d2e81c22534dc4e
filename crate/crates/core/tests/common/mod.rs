//! Dense reference implementations shared by the integration tests. They
//! build every Kronecker lift explicitly and use LU or eigenvalue routines,
//! so they share no code path with the factored library implementations.
#![allow(dead_code)]

use faer::prelude::*;
use faer::{Mat, MatRef, Side};
use fddpilot::c64;
use fddpilot::channel_model::ChannelStats;
use fddpilot::rng::cn01;
use rand::Rng;

pub type CMat = Mat<c64>;

pub fn kron(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn eye(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) })
}

pub fn gaussian(r: &mut impl Rng, rows: usize, cols: usize) -> CMat {
    Mat::from_fn(rows, cols, |_, _| cn01(r))
}

/// `A A^H` for a Gaussian `n x rank` factor, scaled to trace `n`.
pub fn random_psd(r: &mut impl Rng, n: usize, rank: usize) -> CMat {
    let a = gaussian(r, n, rank);
    let c = &a * a.adjoint();
    let tr: f64 = (0..n).map(|i| c[(i, i)].re).sum();
    let c = Mat::from_fn(n, n, |i, j| c[(i, j)] * (n as f64 / tr));
    Mat::from_fn(n, n, |i, j| (c[(i, j)] + c[(j, i)].conj()) * 0.5)
}

pub fn random_stats(r: &mut impl Rng, nt: usize, nr: usize, rank_tx: usize, rank_rx: usize) -> ChannelStats {
    ChannelStats { cov_tx: random_psd(r, nt, rank_tx), cov_rx: random_psd(r, nr, rank_rx), delta: vec![] }
}

/// Log-determinant of a Hermitian positive definite matrix from its eigenvalues.
pub fn logdet_eig(m: MatRef<'_, c64>) -> f64 {
    let h = Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    h.self_adjoint_eigenvalues(Side::Lower).expect("eigenvalues").iter().map(|v| v.ln()).sum()
}

pub fn solve(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    a.partial_piv_lu().solve(b)
}

fn lift(p: MatRef<'_, c64>, n_rx: usize) -> CMat {
    kron(p, eye(n_rx).as_ref())
}

/// `sum_j ln det(I + A C_j A^H / σ²)` with everything dense.
pub fn dense_sum_cmi(p: MatRef<'_, c64>, stats: &[ChannelStats], nv: f64) -> f64 {
    stats
        .iter()
        .map(|s| {
            let a = lift(p, s.cov_rx.nrows());
            let c = kron(s.cov_tx.as_ref(), s.cov_rx.as_ref());
            let m = &a * &c * a.adjoint();
            let n = m.nrows();
            logdet_eig(Mat::from_fn(n, n, |i, j| m[(i, j)] / nv + if i == j { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) }).as_ref())
        })
        .sum()
}

/// Dense objective with every `C_rx` replaced by `(tr C_rx) e e^H`, a
/// rank-one matrix with the same trace.
pub fn dense_lower_bound(p: MatRef<'_, c64>, stats: &[ChannelStats], nv: f64) -> f64 {
    stats
        .iter()
        .map(|s| {
            let tau: f64 = (0..s.cov_rx.nrows()).map(|i| s.cov_rx[(i, i)].re).sum();
            let one = Mat::from_fn(1, 1, |_, _| c64::new(tau, 0.0));
            dense_sum_cmi(p, &[ChannelStats { cov_tx: s.cov_tx.clone(), cov_rx: one, delta: vec![] }], nv)
        })
        .sum()
}

/// Central finite-difference Wirtinger gradient with respect to `conj(P)`.
pub fn fd_gradient(f: impl Fn(MatRef<'_, c64>) -> f64, p: MatRef<'_, c64>, h: f64) -> CMat {
    let mut g = Mat::zeros(p.nrows(), p.ncols());
    let mut q = p.to_owned();
    for j in 0..p.ncols() {
        for i in 0..p.nrows() {
            let base = q[(i, j)];
            let mut d = [0.0; 2];
            for (k, dir) in [c64::new(h, 0.0), c64::new(0.0, h)].into_iter().enumerate() {
                q[(i, j)] = base + dir;
                let fp = f(q.as_ref());
                q[(i, j)] = base - dir;
                let fm = f(q.as_ref());
                d[k] = (fp - fm) / (2.0 * h);
            }
            q[(i, j)] = base;
            g[(i, j)] = c64::new(d[0], d[1]) * 0.5;
        }
    }
    g
}

/// `C A^H (A C A^H + σ² I)^{-1} y` through an LU solve.
pub fn dense_lmmse(cov: MatRef<'_, c64>, p: MatRef<'_, c64>, n_rx: usize, nv: f64, y: &[c64]) -> Vec<c64> {
    let a = lift(p, n_rx);
    let cy = &a * cov * a.adjoint();
    let n = cy.nrows();
    let cy = Mat::from_fn(n, n, |i, j| cy[(i, j)] + if i == j { c64::new(nv, 0.0) } else { c64::new(0.0, 0.0) });
    let yv = Mat::from_fn(y.len(), 1, |i, _| y[i]);
    let z = solve(cy.as_ref(), yv.as_ref());
    let e = cov * a.adjoint() * z;
    (0..e.nrows()).map(|i| e[(i, 0)]).collect()
}

/// Posterior component probabilities of `y` under `y ~ sum_k w_k CN(0, A C_k A^H + σ² I)`.
pub fn dense_responsibilities(weights: &[f64], covs: &[CMat], p: MatRef<'_, c64>, n_rx: usize, nv: f64, y: &[c64]) -> Vec<f64> {
    let a = lift(p, n_rx);
    let yv = Mat::from_fn(y.len(), 1, |i, _| y[i]);
    let lj: Vec<f64> = covs
        .iter()
        .zip(weights)
        .map(|(c, w)| {
            let cy = &a * c * a.adjoint();
            let n = cy.nrows();
            let cy = Mat::from_fn(n, n, |i, j| cy[(i, j)] + if i == j { c64::new(nv, 0.0) } else { c64::new(0.0, 0.0) });
            let z = solve(cy.as_ref(), yv.as_ref());
            let quad: f64 = (0..n).map(|i| (y[i].conj() * z[(i, 0)]).re).sum();
            w.ln() - logdet_eig(cy.as_ref()) - quad
        })
        .collect();
    let mx = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = lj.iter().map(|l| (l - mx).exp()).sum();
    lj.iter().map(|l| (l - mx).exp() / s).collect()
}

/// Conditional-mean estimate under the same mixture.
pub fn dense_gmm_estimate(weights: &[f64], covs: &[CMat], p: MatRef<'_, c64>, n_rx: usize, nv: f64, y: &[c64]) -> Vec<c64> {
    let r = dense_responsibilities(weights, covs, p, n_rx, nv, y);
    let mut out = vec![c64::new(0.0, 0.0); covs[0].nrows()];
    for (c, rk) in covs.iter().zip(&r) {
        for (o, e) in out.iter_mut().zip(dense_lmmse(c.as_ref(), p, n_rx, nv, y)) {
            *o += e * *rk;
        }
    }
    out
}

/// Average log-likelihood of the columns of `x` under a zero-mean mixture.
pub fn mixture_avg_loglik(x: MatRef<'_, c64>, weights: &[f64], covs: &[CMat]) -> f64 {
    let (d, m) = x.shape();
    let parts: Vec<(f64, CMat)> = covs
        .iter()
        .zip(weights)
        .map(|(c, w)| (w.ln() - logdet_eig(c.as_ref()) - d as f64 * std::f64::consts::PI.ln(), solve(c.as_ref(), x)))
        .collect();
    let mut total = 0.0;
    for j in 0..m {
        let lj: Vec<f64> = parts
            .iter()
            .map(|(b, z)| b - (0..d).map(|i| (x[(i, j)].conj() * z[(i, j)]).re).sum::<f64>())
            .collect();
        let mx = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        total += mx + lj.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    }
    total / m as f64
}

pub fn max_abs(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

pub fn frob(a: MatRef<'_, c64>) -> f64 {
    a.norm_l2()
}

pub fn vec_diff_sq(a: &[c64], b: &[c64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}
