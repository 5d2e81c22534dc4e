//! Zero-mean Gaussian mixtures with Kronecker-structured covariances.

mod em;
mod observation;

pub use em::{EmFit, EmOptions, fit_em_zero_mean};
pub use observation::{ObservationParams, Whitened};

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use faer::{Mat, MatRef};
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::channel_model::Dataset;
use crate::error::{Result, dim, invalid};
use crate::linalg::{self, CMat};
use crate::pilot_design::PilotMatrix;
use crate::rng;

use observation::{argmax_first, softmax};

/// Training summary kept next to a fitted model.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FitLog {
    pub seed: u64,
    pub em: Option<EmOptions>,
    pub n_samples: usize,
    pub log_likelihood_tx: Vec<f64>,
    pub log_likelihood_rx: Vec<f64>,
    pub converged_tx: bool,
    pub converged_rx: bool,
}

type CacheKey = (u64, u64);

/// Mixture weights over `K = K_tx * K_rx` components, where component
/// `k = k_tx * K_rx + k_rx` has covariance `cov_tx[k_tx] ⊗ cov_rx[k_rx]`.
pub struct GmmModel {
    pub n_tx: usize,
    pub n_rx: usize,
    pub weights: Vec<f64>,
    pub cov_tx: Vec<CMat>,
    pub cov_rx: Vec<CMat>,
    pub fit_log: FitLog,
    obs_cache: RwLock<HashMap<CacheKey, Arc<ObservationParams>>>,
    chan_cache: OnceLock<Result<ChannelFactors>>,
}

impl Clone for GmmModel {
    fn clone(&self) -> Self {
        Self {
            n_tx: self.n_tx,
            n_rx: self.n_rx,
            weights: self.weights.clone(),
            cov_tx: self.cov_tx.clone(),
            cov_rx: self.cov_rx.clone(),
            fit_log: self.fit_log.clone(),
            obs_cache: RwLock::default(),
            chan_cache: OnceLock::new(),
        }
    }
}

impl fmt::Debug for GmmModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GmmModel")
            .field("n_tx", &self.n_tx)
            .field("n_rx", &self.n_rx)
            .field("k_tx", &self.cov_tx.len())
            .field("k_rx", &self.cov_rx.len())
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedbackIndex {
    pub k_star: usize,
    /// `ceil(log2 K)`.
    pub bit_width: u32,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, cov_tx: Vec<CMat>, cov_rx: Vec<CMat>) -> Result<Self> {
        if cov_tx.is_empty() || cov_rx.is_empty() {
            return Err(invalid("model needs at least one component per side"));
        }
        let n_tx = cov_tx[0].nrows();
        let n_rx = cov_rx[0].nrows();
        if cov_tx.iter().any(|c| c.shape() != (n_tx, n_tx))
            || cov_rx.iter().any(|c| c.shape() != (n_rx, n_rx))
        {
            return Err(dim("component covariances must share a square shape per side"));
        }
        if weights.len() != cov_tx.len() * cov_rx.len() {
            return Err(dim(format!(
                "{} weights for {} x {} components",
                weights.len(),
                cov_tx.len(),
                cov_rx.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights must be nonnegative"));
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid("weights must have a positive finite sum"));
        }
        Ok(Self {
            n_tx,
            n_rx,
            weights: weights.into_iter().map(|w| w / s).collect(),
            cov_tx,
            cov_rx,
            fit_log: FitLog::default(),
            obs_cache: RwLock::default(),
            chan_cache: OnceLock::new(),
        })
    }

    /// Product mixture of independent tx and rx mixtures.
    pub fn from_sides(w_tx: &[f64], cov_tx: Vec<CMat>, w_rx: &[f64], cov_rx: Vec<CMat>) -> Result<Self> {
        let weights = w_tx
            .iter()
            .flat_map(|a| w_rx.iter().map(move |b| a * b))
            .collect();
        Self::new(weights, cov_tx, cov_rx)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn k_tx(&self) -> usize {
        self.cov_tx.len()
    }

    pub fn k_rx(&self) -> usize {
        self.cov_rx.len()
    }

    pub fn split_index(&self, k: usize) -> (usize, usize) {
        (k / self.k_rx(), k % self.k_rx())
    }

    pub fn dim(&self) -> usize {
        self.n_tx * self.n_rx
    }

    pub fn component_tx(&self, k: usize) -> &CMat {
        &self.cov_tx[self.split_index(k).0]
    }

    pub fn component_rx(&self, k: usize) -> &CMat {
        &self.cov_rx[self.split_index(k).1]
    }

    /// Dense `C_k`.
    pub fn component_covariance(&self, k: usize) -> CMat {
        linalg::kron(self.component_tx(k).as_ref(), self.component_rx(k).as_ref())
    }

    /// Factored observation statistics for a pilot, cached per
    /// `(pilot, noise_var)`.
    pub fn observation_params(&self, pilot: &PilotMatrix, noise_var: f64) -> Result<Arc<ObservationParams>> {
        let key = (pilot.fingerprint(), noise_var.to_bits());
        if let Some(p) = self.obs_cache.read().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let p = Arc::new(ObservationParams::new(
            &self.weights,
            &self.cov_tx,
            &self.cov_rx,
            pilot.p.as_ref(),
            noise_var,
        )?);
        self.obs_cache
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert(p.clone());
        Ok(p)
    }

    pub fn clear_cache(&self) {
        self.obs_cache.write().expect("cache lock").clear();
    }

    fn channel_factors(&self) -> Result<&ChannelFactors> {
        self.chan_cache
            .get_or_init(|| ChannelFactors::new(self))
            .as_ref()
            .map_err(|e| crate::error::Error::Factorization(e.to_string()))
    }
}

/// Side eigendecompositions for channel-domain densities.
struct ChannelFactors {
    tx: Vec<(Vec<f64>, CMat)>,
    rx: Vec<(Vec<f64>, CMat)>,
}

fn floored_eigs(c: &CMat) -> Result<(Vec<f64>, CMat)> {
    let (mut v, u) = linalg::eigh_desc(c.as_ref())?;
    let floor = 1e-12 * linalg::trace(c.as_ref()).re.max(f64::MIN_POSITIVE) / c.nrows() as f64;
    for x in v.iter_mut() {
        *x = x.max(floor);
    }
    Ok((v, u))
}

impl ChannelFactors {
    fn new(m: &GmmModel) -> Result<Self> {
        Ok(Self {
            tx: m.cov_tx.iter().map(floored_eigs).collect::<Result<_>>()?,
            rx: m.cov_rx.iter().map(floored_eigs).collect::<Result<_>>()?,
        })
    }
}

/// Transposed rows of every sample matrix, one `N_tx` vector per row.
pub fn tx_side_samples(data: &Dataset) -> CMat {
    let (nt, nr) = (data.n_tx, data.n_rx);
    Mat::from_fn(nt, data.len() * nr, |c, j| data.h[(c * nr + j % nr, j / nr)])
}

/// Columns of every sample matrix, one `N_rx` vector per column.
pub fn rx_side_samples(data: &Dataset) -> CMat {
    let (nt, nr) = (data.n_tx, data.n_rx);
    Mat::from_fn(nr, data.len() * nt, |r, j| data.h[((j % nt) * nr + r, j / nt)])
}

/// Separate tx and rx mixtures combined into a product mixture. A single
/// receive antenna skips the rx fit.
pub fn fit_kronecker_gmm(
    seed: u64,
    data: &Dataset,
    k_tx: usize,
    k_rx: usize,
    opts: EmOptions,
) -> Result<GmmModel> {
    if k_tx == 0 || k_rx == 0 {
        return Err(invalid("component counts must be at least 1"));
    }
    let mut log = FitLog { seed, em: Some(opts), n_samples: data.len(), ..Default::default() };
    let tx = fit_em_zero_mean(&mut rng::stream(seed, rng::tag::EM_TX, 0, 0), tx_side_samples(data).as_ref(), k_tx, opts)?;
    log.log_likelihood_tx = tx.log_likelihood.clone();
    log.converged_tx = tx.converged;
    let (w_rx, cov_rx) = if data.n_rx == 1 {
        log.converged_rx = true;
        (vec![1.0], vec![Mat::from_fn(1, 1, |_, _| c64::new(1.0, 0.0))])
    } else {
        let rx = fit_em_zero_mean(&mut rng::stream(seed, rng::tag::EM_RX, 0, 0), rx_side_samples(data).as_ref(), k_rx, opts)?;
        log.log_likelihood_rx = rx.log_likelihood.clone();
        log.converged_rx = rx.converged;
        (rx.weights, rx.covs)
    };
    let mut m = GmmModel::from_sides(&tx.weights, tx.covs, &w_rx, cov_rx)?;
    m.fit_log = log;
    Ok(m)
}

pub fn observation_component_params(
    model: &GmmModel,
    pilot: &PilotMatrix,
    noise_var: f64,
) -> Result<Arc<ObservationParams>> {
    model.observation_params(pilot, noise_var)
}

pub fn responsibilities_observation(
    model: &GmmModel,
    y: &[c64],
    pilot: &PilotMatrix,
    noise_var: f64,
) -> Result<Vec<f64>> {
    let p = model.observation_params(pilot, noise_var)?;
    if y.len() != pilot.n_p() * model.n_rx {
        return Err(dim("observation length does not match pilot and model"));
    }
    Ok(p.responsibilities(y))
}

/// Per-component log joint densities `log π_k + log N(h; 0, C_k)`.
pub fn log_joint_channel(model: &GmmModel, h: &[c64]) -> Result<Vec<f64>> {
    if h.len() != model.dim() {
        return Err(dim("channel length does not match model"));
    }
    let f = model.channel_factors()?;
    let (nr, nt) = (model.n_rx, model.n_tx);
    let hm = MatRef::from_column_major_slice(h, nr, nt);
    let c0 = (nr * nt) as f64 * std::f64::consts::PI.ln();
    let mut out = Vec::with_capacity(model.k());
    for (lt, ut) in &f.tx {
        let hu = hm * Mat::from_fn(nt, nt, |i, j| ut[(i, j)].conj());
        for (lr, ur) in &f.rx {
            let z = ur.adjoint() * &hu;
            let mut quad = 0.0;
            let mut ld = 0.0;
            for i in 0..nt {
                for l in 0..nr {
                    let v = lt[i] * lr[l];
                    quad += z[(l, i)].norm_sqr() / v;
                    ld += v.ln();
                }
            }
            out.push(-c0 - ld - quad);
        }
    }
    for (o, w) in out.iter_mut().zip(&model.weights) {
        *o += w.ln();
    }
    Ok(out)
}

pub fn responsibilities_channel(model: &GmmModel, h: &[c64]) -> Result<Vec<f64>> {
    Ok(softmax(&log_joint_channel(model, h)?))
}

pub fn feedback_from(resp: &[f64]) -> FeedbackIndex {
    let k = resp.len();
    FeedbackIndex {
        k_star: argmax_first(resp),
        bit_width: usize::BITS - (k.max(1) - 1).leading_zeros(),
    }
}

pub fn map_feedback(model: &GmmModel, y: &[c64], pilot: &PilotMatrix, noise_var: f64) -> Result<FeedbackIndex> {
    Ok(feedback_from(&responsibilities_observation(model, y, pilot, noise_var)?))
}

pub fn gmm_estimate(model: &GmmModel, y: &[c64], pilot: &PilotMatrix, noise_var: f64) -> Result<Vec<c64>> {
    let p = model.observation_params(pilot, noise_var)?;
    if y.len() != pilot.n_p() * model.n_rx {
        return Err(dim("observation length does not match pilot and model"));
    }
    Ok(p.estimate(y).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{cn01, stream};

    fn rand_psd(n: usize, rank: usize, seed: u64) -> CMat {
        let mut r = stream(seed, 99, 0, 0);
        let b = Mat::from_fn(n, rank, |_, _| cn01(&mut r));
        let mut c = &b * b.adjoint();
        linalg::hermitize(&mut c);
        c
    }

    fn rand_pilot(np: usize, nt: usize, seed: u64) -> PilotMatrix {
        let mut r = stream(seed, 98, 0, 0);
        PilotMatrix::new(Mat::from_fn(np, nt, |_, _| cn01(&mut r)), 1.0)
    }

    fn small_model(seed: u64) -> GmmModel {
        GmmModel::from_sides(
            &[0.3, 0.7],
            vec![rand_psd(3, 3, seed), rand_psd(3, 2, seed + 1)],
            &[0.6, 0.4],
            vec![rand_psd(2, 2, seed + 2), rand_psd(2, 1, seed + 3)],
        )
        .unwrap()
    }

    fn dense_cy(m: &GmmModel, k: usize, p: &PilotMatrix, nv: f64) -> CMat {
        let a = linalg::kron(p.p.as_ref(), linalg::identity(m.n_rx).as_ref());
        let c = m.component_covariance(k);
        &a * &c * a.adjoint() + linalg::scaled(linalg::identity(a.nrows()).as_ref(), nv)
    }

    #[test]
    fn factored_logdet_matches_dense() {
        let m = small_model(1);
        let p = rand_pilot(2, 3, 4);
        let op = m.observation_params(&p, 0.3).unwrap();
        for k in 0..m.k() {
            let cy = dense_cy(&m, k, &p, 0.3);
            assert!((op.logdet(k) - linalg::logdet_hpd(cy.as_ref()).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_pilot_logdet() {
        let m = small_model(2);
        let p = PilotMatrix::new(Mat::zeros(2, 3), 1.0);
        let op = m.observation_params(&p, 0.5).unwrap();
        for k in 0..m.k() {
            assert!((op.logdet(k) - 4.0 * 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn component_estimate_matches_dense_filter() {
        let m = small_model(3);
        let p = rand_pilot(2, 3, 5);
        let nv = 0.2;
        let op = m.observation_params(&p, nv).unwrap();
        let mut r = stream(6, 0, 0, 0);
        let y: Vec<c64> = (0..4).map(|_| cn01(&mut r)).collect();
        let a = linalg::kron(p.p.as_ref(), linalg::identity(2).as_ref());
        for k in 0..m.k() {
            let cy = dense_cy(&m, k, &p, nv);
            let x = linalg::solve_hpd(cy.as_ref(), linalg::col_vec(&y).as_ref()).unwrap();
            let h = m.component_covariance(k) * a.adjoint() * &x;
            let est = op.component_estimate(k, &y);
            assert!(linalg::max_abs_diff(h.as_ref(), linalg::col_vec(&est).as_ref()) < 1e-10);
        }
    }

    #[test]
    fn responsibilities_sum_to_one_and_trivial_cases() {
        let m = small_model(4);
        let p = rand_pilot(2, 3, 7);
        let y = vec![c64::new(0.3, -1.0); 4];
        let r = responsibilities_observation(&m, &y, &p, 0.1).unwrap();
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = rand_psd(3, 3, 9);
        let same = GmmModel::new(vec![0.25; 4], vec![c.clone(), c], vec![linalg::identity(2), linalg::identity(2)]).unwrap();
        let r = responsibilities_observation(&same, &y, &p, 0.1).unwrap();
        assert!(r.iter().all(|v| (v - 0.25).abs() < 1e-12));
        let one = GmmModel::new(vec![1.0], vec![rand_psd(3, 3, 1)], vec![linalg::identity(2)]).unwrap();
        assert_eq!(responsibilities_observation(&one, &y, &p, 0.1).unwrap(), vec![1.0]);
        assert_eq!(map_feedback(&one, &y, &p, 0.1).unwrap().k_star, 0);
    }

    #[test]
    fn zero_observation_zero_estimate() {
        let m = small_model(5);
        let p = rand_pilot(2, 3, 8);
        let e = gmm_estimate(&m, &[c64::new(0.0, 0.0); 4], &p, 0.1).unwrap();
        assert!(e.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn side_sample_layout() {
        let h = Mat::from_fn(6, 1, |i, _| c64::new(i as f64, 0.0));
        let d = Dataset { n_tx: 3, n_rx: 2, h, delta: vec![vec![]] };
        let tx = tx_side_samples(&d);
        let rx = rx_side_samples(&d);
        // H = [[0, 2, 4], [1, 3, 5]]
        assert_eq!(tx.shape(), (3, 2));
        assert_eq!((0..3).map(|i| tx[(i, 1)].re).collect::<Vec<_>>(), vec![1.0, 3.0, 5.0]);
        assert_eq!(rx.shape(), (2, 3));
        assert_eq!((0..2).map(|i| rx[(i, 2)].re).collect::<Vec<_>>(), vec![4.0, 5.0]);
    }

    #[test]
    fn bit_width() {
        assert_eq!(feedback_from(&[1.0]).bit_width, 0);
        assert_eq!(feedback_from(&[0.1; 64]).bit_width, 6);
        assert_eq!(feedback_from(&[0.2, 0.5, 0.5]).k_star, 1);
    }
}
