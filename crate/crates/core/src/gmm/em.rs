//! EM for zero-mean complex Gaussian mixtures.

use faer::{Mat, MatRef};
use log::warn;
use num_complex::Complex64 as c64;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, invalid};
use crate::linalg::{self, CMat};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iters: 300, tol: 1e-5 }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub weights: Vec<f64>,
    pub covs: Vec<CMat>,
    /// Average log-likelihood of the parameters after each M-step,
    /// starting with the initial one.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Collapsed components plus extra floor raises.
    pub regularized: usize,
}

struct Params {
    log_w: Vec<f64>,
    covs: Vec<CMat>,
    /// Inverse Cholesky factors and log-determinants.
    linv: Vec<CMat>,
    logdet: Vec<f64>,
}

fn add_diag(c: &mut CMat, eps: f64) {
    for i in 0..c.nrows() {
        c[(i, i)] += eps;
    }
}

fn m_step(
    data: MatRef<'_, c64>,
    resp: &[Vec<f64>],
    global_trace: f64,
) -> Result<(Params, usize)> {
    let (d, m) = data.shape();
    let parts: Vec<(f64, CMat, CMat, f64, usize)> = resp
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            let nk: f64 = r.iter().sum();
            let xs = Mat::from_fn(d, m, |i, j| data[(i, j)] * r[j].sqrt());
            let mut c = if nk > 0.0 {
                linalg::scaled((&xs * xs.adjoint()).as_ref(), 1.0 / nk)
            } else {
                Mat::zeros(d, d)
            };
            linalg::hermitize(&mut c);
            let eps = 1e-6 * global_trace / d as f64;
            if resp.len() > 1 {
                add_diag(&mut c, eps);
            }
            let mut fixes = 0;
            if nk < d as f64 {
                warn!("component {k} collapsed (effective count {nk:.2} < {d})");
                fixes += 1;
            }
            let mut bump = eps;
            let l = loop {
                match linalg::cholesky(c.as_ref()) {
                    Ok(l) => break l,
                    Err(_) if fixes < 8 => {
                        warn!("component {k} covariance not positive definite, raising the floor");
                        bump *= 10.0;
                        add_diag(&mut c, bump);
                        fixes += 1;
                    }
                    Err(e) => return Err(e),
                }
            };
            let logdet: f64 = (0..d).map(|i| 2.0 * l[(i, i)].re.ln()).sum();
            let linv = linalg::lower_inverse(l.as_ref());
            Ok((nk, c, linv, logdet, fixes))
        })
        .collect::<Result<_>>()?;
    let mut p = Params { log_w: vec![], covs: vec![], linv: vec![], logdet: vec![] };
    let mut fixes = 0;
    for (nk, c, linv, ld, f) in parts {
        p.log_w.push((nk / m as f64).ln());
        p.covs.push(c);
        p.linv.push(linv);
        p.logdet.push(ld);
        fixes += f;
    }
    Ok((p, fixes))
}

/// Per-component log joint densities, `K` rows of length `M`.
fn log_joint(data: MatRef<'_, c64>, p: &Params) -> Vec<Vec<f64>> {
    let (d, m) = data.shape();
    let c0 = d as f64 * std::f64::consts::PI.ln();
    p.linv
        .par_iter()
        .enumerate()
        .map(|(k, li)| {
            let q = li * data;
            let base = p.log_w[k] - c0 - p.logdet[k];
            (0..m)
                .map(|j| {
                    let quad: f64 = q.col_as_slice(j).iter().map(|z| z.norm_sqr()).sum();
                    base - quad
                })
                .collect()
        })
        .collect()
}

/// Normalize log joint densities in place into responsibilities and return
/// the average log-likelihood.
fn e_step(data: MatRef<'_, c64>, p: &Params) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut lj = log_joint(data, p);
    let m = data.ncols();
    let k = lj.len();
    let mut total = 0.0;
    for j in 0..m {
        let mx = (0..k).map(|c| lj[c][j]).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..k).map(|c| (lj[c][j] - mx).exp()).sum();
        let lse = mx + s.ln();
        if !lse.is_finite() {
            return Err(Error::NonFinite(format!("log-likelihood of sample {j}")));
        }
        total += lse;
        for row in lj.iter_mut() {
            row[j] = (row[j] - lse).exp();
        }
    }
    Ok((lj, total / m as f64))
}

/// Fits a `k`-component zero-mean mixture to the columns of `data`.
pub fn fit_em_zero_mean<R: Rng + ?Sized>(
    rng: &mut R,
    data: MatRef<'_, c64>,
    k: usize,
    opts: EmOptions,
) -> Result<EmFit> {
    let (d, m) = data.shape();
    if k == 0 || d == 0 {
        return Err(invalid("need k >= 1 and dimension >= 1"));
    }
    if m < k {
        return Err(invalid(format!("{m} samples cannot fit {k} components")));
    }
    if opts.max_iters == 0 || !(opts.tol >= 0.0) {
        return Err(invalid("EM needs max_iters >= 1 and tol >= 0"));
    }
    let global_trace = data.norm_l2().powi(2) / m as f64;

    let mut resp = vec![vec![0.0; m]; k];
    for j in 0..m {
        let e: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let s: f64 = e.iter().sum();
        for c in 0..k {
            resp[c][j] = e[c] / s;
        }
    }
    let (mut params, mut regularized) = m_step(data, &resp, global_trace)?;
    let mut lls = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut previous: Option<Params> = None;
    loop {
        let (r, ll) = e_step(data, &params)?;
        if let Some(&prev) = lls.last() {
            // The ridge can cost a sliver of likelihood near convergence;
            // keep the better parameters.
            if ll < prev {
                params = previous.take().expect("set after each M-step");
                iterations -= 1;
                converged = true;
                break;
            }
            lls.push(ll);
            if ll - prev < opts.tol {
                converged = true;
                break;
            }
        } else {
            lls.push(ll);
        }
        if iterations == opts.max_iters {
            break;
        }
        let (p, f) = m_step(data, &r, global_trace)?;
        previous = Some(std::mem::replace(&mut params, p));
        regularized += f;
        iterations += 1;
    }
    Ok(EmFit {
        weights: params.log_w.iter().map(|l| l.exp()).collect(),
        covs: params.covs,
        log_likelihood: lls,
        iterations,
        converged,
        regularized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{cn01, stream};

    fn draws(n: usize, m: usize, scale: &[f64], seed: u64) -> CMat {
        let mut r = stream(seed, 0, 0, 0);
        Mat::from_fn(n, m, |i, _| cn01(&mut r) * scale[i].sqrt())
    }

    #[test]
    fn single_component_is_sample_covariance() {
        let x = draws(3, 500, &[1.0, 2.0, 0.5], 1);
        let fit = fit_em_zero_mean(&mut stream(0, 0, 0, 0), x.as_ref(), 1, EmOptions { max_iters: 1, tol: 0.0 }).unwrap();
        let sc = linalg::scaled((&x * x.adjoint()).as_ref(), 1.0 / 500.0);
        assert!(linalg::max_abs_diff(fit.covs[0].as_ref(), sc.as_ref()) < 1e-12);
        assert!((fit.weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn likelihood_never_decreases() {
        let a = draws(4, 600, &[1.0, 1.0, 0.1, 0.1], 2);
        let b = draws(4, 600, &[0.1, 0.1, 3.0, 3.0], 3);
        let mut x = Mat::zeros(4, 1200);
        for j in 0..600 {
            for i in 0..4 {
                x[(i, j)] = a[(i, j)];
                x[(i, 600 + j)] = b[(i, j)];
            }
        }
        let fit = fit_em_zero_mean(&mut stream(4, 0, 0, 0), x.as_ref(), 3, EmOptions { max_iters: 60, tol: 0.0 }).unwrap();
        assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-10));
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_too_few_samples() {
        let x = draws(2, 3, &[1.0, 1.0], 5);
        assert!(fit_em_zero_mean(&mut stream(0, 0, 0, 0), x.as_ref(), 4, EmOptions::default()).is_err());
    }
}
