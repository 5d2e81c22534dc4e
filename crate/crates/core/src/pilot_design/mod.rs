//! Pilot matrices: eigen-based single-user pilots and codebooks, DFT pilots,
//! and the sum-CMI optimizers for multiple users.

mod cmi;
mod optimizer;

pub use cmi::{
    KronTerm, cmi_gradient, cmi_gradient_direct, kkt_residual_full, kkt_residual_lower_bound,
    kron_diag_svd, lower_bound, lower_bound_map, sum_cmi, sum_cmi_dense,
};
pub use optimizer::{
    InitKind, ObjectiveKind, OptimizerOptions, OptimizerTrace, optimize_pilot,
    optimize_pilot_full, optimize_pilot_lower_bound,
};

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use num_complex::Complex64 as c64;
use rand::Rng;
use rand::seq::index;

use crate::error::{Result, invalid};
use crate::gmm::GmmModel;
use crate::linalg::{self, CMat};
use crate::rng::cn01;

#[derive(Clone, Debug)]
pub struct PilotMatrix {
    /// `n_p x N_tx`.
    pub p: CMat,
    pub rho: f64,
}

impl PilotMatrix {
    pub fn new(p: CMat, rho: f64) -> Self {
        Self { p, rho }
    }

    pub fn n_p(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.p.ncols()
    }

    /// `tr(P P^H)`.
    pub fn total_power(&self) -> f64 {
        self.p.norm_l2().powi(2)
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.n_p())
            .map(|i| (0..self.n_tx()).map(|j| self.p[(i, j)].norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }

    pub fn within_budget(&self) -> bool {
        self.total_power() <= self.rho * self.n_p() as f64 + 1e-9
    }

    pub fn is_sub_unitary(&self) -> bool {
        let s = self.rho.sqrt();
        self.row_norms().iter().all(|r| (r - s).abs() < 1e-9)
    }

    pub fn fingerprint(&self) -> u64 {
        linalg::fingerprint(self.p.as_ref())
    }

    /// Scale to `tr(P P^H) = rho * n_p`.
    pub fn normalized(p: CMat, rho: f64) -> Result<Self> {
        let f = p.norm_l2();
        if !(f > 0.0 && f.is_finite()) {
            return Err(crate::error::Error::NonFinite(format!("pilot norm {f}")));
        }
        let target = (rho * p.nrows() as f64).sqrt();
        Ok(Self::new(linalg::scaled(p.as_ref(), target / f), rho))
    }
}

#[derive(Clone, Debug)]
pub struct PilotCodebook {
    pub entries: Vec<PilotMatrix>,
}

impl PilotCodebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, k: usize) -> &PilotMatrix {
        &self.entries[k]
    }
}

/// Rows are `sqrt(rho) u^H` for the `n_p` dominant eigenvectors of `cov_tx`.
pub fn genie_pilot_su(cov_tx: MatRef<'_, c64>, n_p: usize, rho: f64) -> Result<PilotMatrix> {
    let n = cov_tx.nrows();
    if n_p == 0 || n_p > n {
        return Err(invalid(format!("n_p must lie in 1..={n}")));
    }
    let (_, u) = linalg::eigh_desc(cov_tx)?;
    let s = rho.sqrt();
    Ok(PilotMatrix::new(Mat::from_fn(n_p, n, |i, j| u[(j, i)].conj() * s), rho))
}

/// One eigen pilot per component; components sharing a tx covariance share
/// a pilot.
pub fn build_pilot_codebook(model: &GmmModel, n_p: usize, rho: f64) -> Result<PilotCodebook> {
    let per_tx: Vec<PilotMatrix> = model
        .cov_tx
        .iter()
        .map(|c| genie_pilot_su(c.as_ref(), n_p, rho))
        .collect::<Result<_>>()?;
    Ok(PilotCodebook {
        entries: (0..model.k()).map(|k| per_tx[model.split_index(k).0].clone()).collect(),
    })
}

/// First `n_p` rows of the unitary `N_tx`-point DFT, row norm `sqrt(rho)`.
pub fn dft_pilot_su(n_tx: usize, n_p: usize, rho: f64) -> Result<PilotMatrix> {
    if n_p == 0 || n_p > n_tx {
        return Err(invalid(format!("n_p must lie in 1..={n_tx}")));
    }
    let s = (rho / n_tx as f64).sqrt();
    Ok(PilotMatrix::new(
        Mat::from_fn(n_p, n_tx, |p, c| {
            c64::from_polar(s, -2.0 * PI * ((p * c) % n_tx) as f64 / n_tx as f64)
        }),
        rho,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DftSelection {
    /// `q_p = floor(p * os * N / n_p)`.
    EvenlySpaced,
    /// Distinct columns drawn with the given seed.
    Random(u64),
}

/// Oversampled DFT dictionary `D[c, q] = exp(-i 2 pi c q / (os N)) / sqrt(N)`.
pub fn dft_dictionary(n: usize, oversampling: usize) -> CMat {
    let m = n * oversampling;
    let s = 1.0 / (n as f64).sqrt();
    Mat::from_fn(n, m, |c, q| c64::from_polar(s, -2.0 * PI * ((c * q) % m) as f64 / m as f64))
}

/// Rows are selected dictionary columns (transposed), scaled to norm `sqrt(rho)`.
pub fn dft_pilot_mu(
    n_tx: usize,
    n_p: usize,
    rho: f64,
    oversampling: usize,
    selection: DftSelection,
) -> Result<PilotMatrix> {
    let width = oversampling * n_tx;
    if oversampling == 0 || n_p == 0 || n_p > width {
        return Err(invalid(format!("n_p must lie in 1..={width}")));
    }
    let cols: Vec<usize> = match selection {
        DftSelection::EvenlySpaced => (0..n_p).map(|p| p * width / n_p).collect(),
        DftSelection::Random(seed) => {
            let mut r = crate::rng::stream(seed, crate::rng::tag::PILOT, 1, 0);
            index::sample(&mut r, width, n_p).into_vec()
        }
    };
    let d = dft_dictionary(n_tx, oversampling);
    let s = rho.sqrt();
    Ok(PilotMatrix::new(Mat::from_fn(n_p, n_tx, |p, c| d[(c, cols[p])] * s), rho))
}

/// Random sub-unitary pilot: orthonormalized Gaussian rows scaled by `sqrt(rho)`.
pub fn random_pilot<R: Rng + ?Sized>(rng: &mut R, n_tx: usize, n_p: usize, rho: f64) -> Result<PilotMatrix> {
    if n_p == 0 || n_p > n_tx {
        return Err(invalid(format!("n_p must lie in 1..={n_tx}")));
    }
    let mut g = Mat::<c64>::zeros(n_tx, n_p);
    for j in 0..n_p {
        for i in 0..n_tx {
            g[(i, j)] = cn01(rng);
        }
    }
    let q = g.qr().compute_thin_Q();
    let s = rho.sqrt();
    Ok(PilotMatrix::new(Mat::from_fn(n_p, n_tx, |p, c| q[(c, p)].conj() * s), rho))
}
