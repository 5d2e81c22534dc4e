//! Baseline channel estimators: genie LMMSE, sample-covariance LMMSE and
//! OMP with genie-selected sparsity.

use faer::{Mat, MatRef};
use num_complex::Complex64 as c64;

use crate::channel_model::ChannelStats;
use crate::error::{Result, dim};
use crate::gmm::ObservationParams;
use crate::linalg::{self, CMat};
use crate::pilot_design::{PilotMatrix, dft_dictionary};

/// LMMSE filter for a single Kronecker covariance, applied in factored form.
pub struct KroneckerLmmse {
    params: ObservationParams,
}

impl KroneckerLmmse {
    pub fn new(cov_tx: &CMat, cov_rx: &CMat, pilot: &PilotMatrix, noise_var: f64) -> Result<Self> {
        let params = ObservationParams::new(
            &[1.0],
            std::slice::from_ref(cov_tx),
            std::slice::from_ref(cov_rx),
            pilot.p.as_ref(),
            noise_var,
        )?;
        Ok(Self { params })
    }

    pub fn from_stats(stats: &ChannelStats, pilot: &PilotMatrix, noise_var: f64) -> Result<Self> {
        Self::new(&stats.cov_tx, &stats.cov_rx, pilot, noise_var)
    }

    pub fn estimate(&self, y: &[c64]) -> Vec<c64> {
        self.params.component_estimate(0, y)
    }
}

pub fn genie_lmmse(y: &[c64], pilot: &PilotMatrix, stats: &ChannelStats, noise_var: f64) -> Result<Vec<c64>> {
    if y.len() != pilot.n_p() * stats.n_rx() {
        return Err(dim("observation length does not match pilot and covariance"));
    }
    Ok(KroneckerLmmse::from_stats(stats, pilot, noise_var)?.estimate(y))
}

/// Dense LMMSE filter `C A^H (A C A^H + σ² I)^{-1}` with `A = P ⊗ I`.
pub struct DenseLmmse {
    filter: CMat,
}

impl DenseLmmse {
    pub fn new(cov: MatRef<'_, c64>, pilot: &PilotMatrix, n_rx: usize, noise_var: f64) -> Result<Self> {
        let n = pilot.n_tx() * n_rx;
        if cov.shape() != (n, n) {
            return Err(dim(format!("covariance must be {n} x {n}")));
        }
        let a = linalg::kron(pilot.p.as_ref(), linalg::identity(n_rx).as_ref());
        let ac = &a * cov;
        let mut cy = &ac * a.adjoint() + linalg::scaled(linalg::identity(a.nrows()).as_ref(), noise_var);
        linalg::hermitize(&mut cy);
        let x = linalg::solve_hpd(cy.as_ref(), ac.as_ref())?;
        Ok(Self { filter: x.adjoint().to_owned() })
    }

    pub fn estimate(&self, y: &[c64]) -> Vec<c64> {
        let v = &self.filter * linalg::col_vec(y);
        v.col_as_slice(0).to_vec()
    }
}

pub fn sample_cov_lmmse(
    y: &[c64],
    pilot: &PilotMatrix,
    sample_cov: MatRef<'_, c64>,
    noise_var: f64,
) -> Result<Vec<c64>> {
    let n_rx = sample_cov.nrows() / pilot.n_tx().max(1);
    if y.len() != pilot.n_p() * n_rx {
        return Err(dim("observation length does not match pilot and covariance"));
    }
    Ok(DenseLmmse::new(sample_cov, pilot, n_rx, noise_var)?.estimate(y))
}

/// Oversampled DFT dictionary for vectorized channels: the tx dictionary for
/// one receive antenna, otherwise `D_tx ⊗ D_rx`.
pub fn channel_dictionary(n_tx: usize, n_rx: usize, oversampling: usize) -> CMat {
    let dt = dft_dictionary(n_tx, oversampling);
    if n_rx == 1 {
        dt
    } else {
        linalg::kron(dt.as_ref(), dft_dictionary(n_rx, oversampling).as_ref())
    }
}

/// OMP on the sensing matrix `(P ⊗ I) D`, keeping the sparsity order whose
/// reconstruction is closest to the true channel.
pub struct OmpGenie {
    dict: CMat,
    phi: CMat,
    col_norms: Vec<f64>,
    s_max: usize,
}

impl OmpGenie {
    pub fn new(dictionary: CMat, pilot: &PilotMatrix, n_rx: usize) -> Result<Self> {
        if dictionary.nrows() != pilot.n_tx() * n_rx {
            return Err(dim("dictionary rows must equal N_tx * N_rx"));
        }
        let a = linalg::kron(pilot.p.as_ref(), linalg::identity(n_rx).as_ref());
        let phi = &a * &dictionary;
        let col_norms = (0..phi.ncols())
            .map(|j| phi.col_as_slice(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect();
        Ok(Self { dict: dictionary, phi, col_norms, s_max: pilot.n_p() * n_rx })
    }

    pub fn estimate(&self, y: &[c64], true_h: &[c64]) -> Vec<c64> {
        let n = self.dict.nrows();
        let ycol = linalg::col_vec(y);
        let err = |h: &[c64]| -> f64 { h.iter().zip(true_h).map(|(a, b)| (a - b).norm_sqr()).sum() };
        let mut best = vec![c64::new(0.0, 0.0); n];
        let mut best_err = err(&best);
        let y_norm = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut residual = ycol.clone();
        let mut support: Vec<usize> = Vec::new();
        for _ in 0..self.s_max.min(self.phi.ncols()) {
            let corr = self.phi.adjoint() * &residual;
            let mut pick = None;
            let mut pick_val = -1.0;
            for q in 0..self.phi.ncols() {
                if self.col_norms[q] <= 1e-12 || support.contains(&q) {
                    continue;
                }
                let v = corr[(q, 0)].norm() / self.col_norms[q];
                if v > pick_val {
                    pick_val = v;
                    pick = Some(q);
                }
            }
            let Some(q) = pick else { break };
            support.push(q);
            let sub = Mat::from_fn(self.phi.nrows(), support.len(), |i, j| self.phi[(i, support[j])]);
            let Ok(svd) = sub.thin_svd() else { break };
            let coef = svd.pseudoinverse() * &ycol;
            residual = &ycol - &sub * &coef;
            let dsub = Mat::from_fn(n, support.len(), |i, j| self.dict[(i, support[j])]);
            let h = &dsub * &coef;
            let h = h.col_as_slice(0);
            let e = err(h);
            if e < best_err {
                best_err = e;
                best = h.to_vec();
            }
            let r = residual.norm_l2();
            if r <= 1e-13 * y_norm.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        best
    }
}

pub fn omp_genie_estimate(
    y: &[c64],
    pilot: &PilotMatrix,
    dictionary: CMat,
    true_h: &[c64],
) -> Result<Vec<c64>> {
    let n_rx = true_h.len() / pilot.n_tx().max(1);
    Ok(OmpGenie::new(dictionary, pilot, n_rx)?.estimate(y, true_h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_model::apply_pilot;
    use crate::rng::{cn01, stream};

    fn rand_psd(n: usize, seed: u64) -> CMat {
        let mut r = stream(seed, 0, 0, 0);
        let a = Mat::from_fn(n, n, |_, _| cn01(&mut r));
        let mut c = &a * a.adjoint();
        linalg::hermitize(&mut c);
        c
    }

    #[test]
    fn scalar_closed_form() {
        let c = 1.7;
        let p = c64::new(0.6, -0.8) * 1.3;
        let nv = 0.4;
        let st = ChannelStats {
            cov_tx: Mat::from_fn(1, 1, |_, _| c64::new(c, 0.0)),
            cov_rx: linalg::identity(1),
            delta: vec![],
        };
        let pilot = PilotMatrix::new(Mat::from_fn(1, 1, |_, _| p), p.norm_sqr());
        let y = c64::new(0.3, 2.0);
        let e = genie_lmmse(&[y], &pilot, &st, nv).unwrap();
        let hand = y * p.conj() * c / (p.norm_sqr() * c + nv);
        assert!((e[0] - hand).norm() < 1e-14);
    }

    #[test]
    fn isotropic_sample_cov_closed_form() {
        let rho: f64 = 2.0;
        let pilot = PilotMatrix::new(linalg::scaled(linalg::identity(3).as_ref(), rho.sqrt()), rho);
        let y: Vec<c64> = (0..6).map(|i| c64::new(i as f64, 1.0)).collect();
        let e = sample_cov_lmmse(&y, &pilot, linalg::identity(6).as_ref(), 0.5).unwrap();
        let g = rho.sqrt() / (rho + 0.5);
        for (a, b) in e.iter().zip(&y) {
            assert!((a - b * g).norm() < 1e-12);
        }
    }

    #[test]
    fn dense_matches_kronecker_with_true_covariance() {
        let ct = rand_psd(4, 1);
        let cr = rand_psd(2, 2);
        let mut r = stream(3, 0, 0, 0);
        let pilot = PilotMatrix::new(Mat::from_fn(2, 4, |_, _| cn01(&mut r)), 1.0);
        let y: Vec<c64> = (0..4).map(|_| cn01(&mut r)).collect();
        let st = ChannelStats { cov_tx: ct, cov_rx: cr, delta: vec![] };
        let a = genie_lmmse(&y, &pilot, &st, 0.3).unwrap();
        let b = sample_cov_lmmse(&y, &pilot, st.full_covariance().as_ref(), 0.3).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).norm() < 1e-10);
        }
    }

    #[test]
    fn omp_recovers_single_atom() {
        let (nt, nr) = (8, 2);
        let d = channel_dictionary(nt, nr, 2);
        let mut r = stream(4, 0, 0, 0);
        let pilot = PilotMatrix::new(Mat::from_fn(4, nt, |_, _| cn01(&mut r)), 1.0);
        let h: Vec<c64> = d.col_as_slice(5).iter().map(|z| z * c64::new(2.0, -1.0)).collect();
        let y = apply_pilot(&h, pilot.p.as_ref(), nr);
        let e = omp_genie_estimate(&y, &pilot, d, &h).unwrap();
        let err: f64 = e.iter().zip(&h).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!(err < 1e-20);
    }

    #[test]
    fn omp_zero_channel() {
        let d = channel_dictionary(4, 1, 2);
        let pilot = PilotMatrix::new(linalg::identity(4), 1.0);
        let h = vec![c64::new(0.0, 0.0); 4];
        let y = vec![c64::new(0.1, 0.0), c64::new(0.0, 0.2), c64::new(0.0, 0.0), c64::new(-0.1, 0.0)];
        let e = omp_genie_estimate(&y, &pilot, d, &h).unwrap();
        assert!(e.iter().all(|z| z.norm() == 0.0));
    }
}
