//! Spatial channel statistics, channel draws, datasets and pilot observations.
//!
//! Channels are `N_rx x N_tx` matrices `H`, vectorized by stacking columns:
//! `h[c * n_rx + r] = H[r, c]`.

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use num_complex::Complex64 as c64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, dim, invalid};
use crate::linalg::{self, CMat};
use crate::pilot_design::PilotMatrix;
use crate::rng::{self, cn01};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_pilots: usize,
    pub n_users: usize,
    pub snr_db: f64,
    pub rho: f64,
    pub n_blocks: usize,
    pub seed: u64,
    pub spread_tx_deg: f64,
    pub spread_rx_deg: f64,
    pub quad_points: usize,
    /// Propagation clusters per side, summed with equal weights.
    pub n_clusters: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_tx: 16,
            n_rx: 4,
            n_pilots: 4,
            n_users: 1,
            snr_db: 10.0,
            rho: 1.0,
            n_blocks: 5,
            seed: 0,
            spread_tx_deg: 2.0,
            spread_rx_deg: 35.0,
            quad_points: 2048,
            n_clusters: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(invalid("antenna counts must be at least 1"));
        }
        if self.n_pilots == 0 || self.n_pilots > self.n_tx {
            return Err(invalid(format!(
                "n_pilots must lie in 1..={}, got {}",
                self.n_tx, self.n_pilots
            )));
        }
        if self.n_users == 0 {
            return Err(invalid("n_users must be at least 1"));
        }
        if !(self.rho > 0.0) {
            return Err(invalid("rho must be positive"));
        }
        if !(self.spread_tx_deg > 0.0 && self.spread_rx_deg > 0.0) {
            return Err(invalid("angular spreads must be positive"));
        }
        if self.quad_points < 64 {
            return Err(invalid("quad_points must be at least 64"));
        }
        if self.n_clusters == 0 {
            return Err(invalid("n_clusters must be at least 1"));
        }
        if !self.snr_db.is_finite() {
            return Err(invalid("snr_db must be finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n_tx * self.n_rx
    }

    /// Noise variance for unit-power pilots, `10^(-snr/10)`.
    pub fn noise_var(&self) -> f64 {
        noise_var_from_snr(self.snr_db)
    }
}

pub fn noise_var_from_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Per-user covariance pair. `delta` holds the tx cluster centers followed
/// by the rx cluster centers.
#[derive(Clone, Debug)]
pub struct ChannelStats {
    pub cov_tx: CMat,
    pub cov_rx: CMat,
    pub delta: Vec<f64>,
}

impl ChannelStats {
    pub fn n_tx(&self) -> usize {
        self.cov_tx.nrows()
    }

    pub fn n_rx(&self) -> usize {
        self.cov_rx.nrows()
    }

    /// `cov_tx ⊗ cov_rx`, dense.
    pub fn full_covariance(&self) -> CMat {
        linalg::kron(self.cov_tx.as_ref(), self.cov_rx.as_ref())
    }

    pub fn sampler(&self) -> Result<ChannelSampler> {
        ChannelSampler::new(self.cov_tx.as_ref(), self.cov_rx.as_ref())
    }
}

#[derive(Clone, Debug)]
pub struct ChannelSample {
    pub h: Vec<c64>,
    pub block_index: usize,
    pub user_index: usize,
}

#[derive(Clone, Debug)]
pub struct ObservationBatch {
    pub y: Vec<c64>,
    pub pilot: PilotMatrix,
    pub noise_var: f64,
}

pub fn steering_vector(theta: f64, n: usize) -> Vec<c64> {
    let s = theta.sin();
    (0..n)
        .map(|m| c64::from_polar(1.0, PI * m as f64 * s))
        .collect()
}

/// Quadrature of the steering-vector outer product under a Laplacian angular
/// density truncated to `[-pi, pi]`. The result is Toeplitz with unit diagonal.
pub fn side_covariance(
    center_angles: &[f64],
    spread_deg: f64,
    n: usize,
    quad_points: usize,
) -> Result<CMat> {
    if !(spread_deg > 0.0) {
        return Err(invalid("spread must be positive"));
    }
    if quad_points < 64 {
        return Err(invalid("quad_points must be at least 64"));
    }
    if center_angles.is_empty() || n == 0 {
        return Err(invalid("need at least one center angle and one antenna"));
    }
    let sigma = spread_deg.to_radians();
    let b = std::f64::consts::SQRT_2 / sigma;
    let step = 2.0 * PI / (quad_points - 1) as f64;
    let mut col = vec![c64::new(0.0, 0.0); n];
    for &center in center_angles {
        let mut w: Vec<f64> = (0..quad_points)
            .map(|i| {
                let th = -PI + step * i as f64;
                let trap = if i == 0 || i == quad_points - 1 { 0.5 } else { 1.0 };
                trap * (-b * (th - center).abs()).exp()
            })
            .collect();
        let total: f64 = w.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::NonFinite(format!(
                "angular density does not normalize (center {center}, spread {spread_deg})"
            )));
        }
        let cw = 1.0 / (total * center_angles.len() as f64);
        for (i, wi) in w.iter_mut().enumerate() {
            let th = -PI + step * i as f64;
            let z = c64::from_polar(1.0, PI * th.sin());
            let mut p = c64::new(*wi * cw, 0.0);
            for c in col.iter_mut() {
                *c += p;
                p *= z;
            }
        }
    }
    if col.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(Error::NonFinite("covariance quadrature".into()));
    }
    let mut c = Mat::from_fn(n, n, |r, k| {
        if r >= k { col[r - k] } else { col[k - r].conj() }
    });
    for i in 0..n {
        c[(i, i)] = c64::new(1.0, 0.0);
    }
    linalg::hermitize(&mut c);
    Ok(c)
}

pub fn stats_from_delta(cfg: &ScenarioConfig, delta: &[f64]) -> Result<ChannelStats> {
    let nc = cfg.n_clusters;
    if delta.len() != 2 * nc {
        return Err(dim(format!("expected {} angles, got {}", 2 * nc, delta.len())));
    }
    let cov_tx = side_covariance(&delta[..nc], cfg.spread_tx_deg, cfg.n_tx, cfg.quad_points)?;
    let cov_rx = if cfg.n_rx == 1 {
        Mat::from_fn(1, 1, |_, _| c64::new(1.0, 0.0))
    } else {
        side_covariance(&delta[nc..], cfg.spread_rx_deg, cfg.n_rx, cfg.quad_points)?
    };
    Ok(ChannelStats { cov_tx, cov_rx, delta: delta.to_vec() })
}

pub fn sample_delta<R: Rng + ?Sized>(rng: &mut R, cfg: &ScenarioConfig) -> Vec<f64> {
    (0..2 * cfg.n_clusters)
        .map(|_| rng.random_range(-PI / 2.0..=PI / 2.0))
        .collect()
}

pub fn sample_scenario_stats<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &ScenarioConfig,
) -> Result<ChannelStats> {
    let delta = sample_delta(rng, cfg);
    stats_from_delta(cfg, &delta)
}

/// Matrix-normal sampler `H = L_rx G L_tx^T`.
#[derive(Clone, Debug)]
pub struct ChannelSampler {
    l_tx: CMat,
    l_rx: CMat,
}

impl ChannelSampler {
    pub fn new(cov_tx: MatRef<'_, c64>, cov_rx: MatRef<'_, c64>) -> Result<Self> {
        Ok(Self {
            l_tx: linalg::psd_factor(cov_tx, 1e-10)?,
            l_rx: linalg::psd_factor(cov_rx, 1e-10)?,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<c64> {
        let (nr, nt) = (self.l_rx.nrows(), self.l_tx.nrows());
        let mut g = Mat::<c64>::zeros(nr, nt);
        for j in 0..nt {
            for i in 0..nr {
                g[(i, j)] = cn01(rng);
            }
        }
        let h = &self.l_rx * &g * self.l_tx.transpose();
        linalg::vec_of(h.as_ref())
    }
}

pub fn draw_channel<R: Rng + ?Sized>(rng: &mut R, stats: &ChannelStats) -> Result<ChannelSample> {
    let s = stats.sampler()?;
    Ok(ChannelSample { h: s.draw(rng), block_index: 0, user_index: 0 })
}

/// Training or evaluation channels with the angles that generated them.
/// Column `m` of `h` is sample `m`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub n_tx: usize,
    pub n_rx: usize,
    pub h: CMat,
    pub delta: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.h.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.h.ncols() == 0
    }

    pub fn sample(&self, m: usize) -> Vec<c64> {
        self.h.col(m).iter().copied().collect()
    }

    pub fn stats(&self, m: usize, cfg: &ScenarioConfig) -> Result<ChannelStats> {
        stats_from_delta(cfg, &self.delta[m])
    }

    /// `(1/M) sum h h^H`.
    pub fn sample_covariance(&self) -> CMat {
        let c = &self.h * self.h.adjoint();
        let mut c = linalg::scaled(c.as_ref(), 1.0 / self.len() as f64);
        linalg::hermitize(&mut c);
        c
    }
}

/// Draws `m` samples, each with its own angles. Per-sample streams are
/// derived from one value of `rng`, so the result does not depend on the
/// number of worker threads.
pub fn generate_dataset<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &ScenarioConfig,
    m: usize,
) -> Result<Dataset> {
    if m == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    cfg.validate()?;
    let base: u64 = rng.random();
    let cols: Vec<(Vec<c64>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(base, rng::tag::TRAIN, i as u64, 0);
            let delta = sample_delta(&mut r, cfg);
            let stats = stats_from_delta(cfg, &delta)?;
            let h = stats.sampler()?.draw(&mut r);
            Ok((h, delta))
        })
        .collect::<Result<_>>()?;
    let n = cfg.dim();
    let mut h = Mat::zeros(n, m);
    let mut delta = Vec::with_capacity(m);
    for (j, (col, d)) in cols.into_iter().enumerate() {
        for i in 0..n {
            h[(i, j)] = col[i];
        }
        delta.push(d);
    }
    Ok(Dataset { n_tx: cfg.n_tx, n_rx: cfg.n_rx, h, delta })
}

/// `vec(H P^T)` for a vectorized channel, without forming `P ⊗ I`.
pub fn apply_pilot(h: &[c64], p: MatRef<'_, c64>, n_rx: usize) -> Vec<c64> {
    let (np, nt) = p.shape();
    let mut y = vec![c64::new(0.0, 0.0); np * n_rx];
    for c in 0..nt {
        let hc = &h[c * n_rx..(c + 1) * n_rx];
        for q in 0..np {
            let pv = p[(q, c)];
            let yq = &mut y[q * n_rx..(q + 1) * n_rx];
            for r in 0..n_rx {
                yq[r] += hc[r] * pv;
            }
        }
    }
    y
}

pub fn observe<R: Rng + ?Sized>(
    rng: &mut R,
    h: &ChannelSample,
    pilot: &PilotMatrix,
    noise_var: f64,
) -> Result<ObservationBatch> {
    let nt = pilot.n_tx();
    if nt == 0 || h.h.len() % nt != 0 {
        return Err(dim(format!(
            "channel length {} is not a multiple of N_tx = {nt}",
            h.h.len()
        )));
    }
    if !(noise_var >= 0.0) {
        return Err(invalid("noise variance must be nonnegative"));
    }
    let n_rx = h.h.len() / nt;
    let mut y = apply_pilot(&h.h, pilot.p.as_ref(), n_rx);
    let s = noise_var.sqrt();
    for v in y.iter_mut() {
        *v += cn01(rng) * s;
    }
    Ok(ObservationBatch { y, pilot: pilot.clone(), noise_var })
}
