//! Per-component observation statistics in Kronecker-factored form.
//!
//! With `P C_tx P^H = V S V^H` and `C_rx = W T W^H`, the observation
//! covariance of component `(a, b)` is `(V ⊗ W)(S ⊗ T + σ² I)(V ⊗ W)^H`,
//! and the whitened coordinates of `y` are `Z = W^H Y conj(V)` where
//! `Y` is the `N_rx x n_p` reshape of `y`.

use faer::{Mat, MatRef};
use num_complex::Complex64 as c64;

use crate::error::{Result, invalid};
use crate::linalg::{self, CMat};

#[derive(Clone, Debug)]
pub(crate) struct TxFactor {
    /// `conj(V)`.
    pub vc: CMat,
    pub s: Vec<f64>,
    /// `C_tx P^H V`.
    pub g: CMat,
}

impl TxFactor {
    pub fn new(cov_tx: MatRef<'_, c64>, p: MatRef<'_, c64>) -> Result<Self> {
        let cp = cov_tx * p.adjoint();
        let mut a = p * &cp;
        linalg::hermitize(&mut a);
        let (s, v) = linalg::eigh_desc(a.as_ref())?;
        Ok(Self {
            vc: Mat::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)].conj()),
            s: s.into_iter().map(|x| x.max(0.0)).collect(),
            g: &cp * &v,
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct RxFactor {
    pub w: CMat,
    pub wh: CMat,
    pub t: Vec<f64>,
}

impl RxFactor {
    pub fn new(cov_rx: MatRef<'_, c64>) -> Result<Self> {
        let (t, w) = linalg::eigh_desc(cov_rx)?;
        Ok(Self {
            wh: w.adjoint().to_owned(),
            w,
            t: t.into_iter().map(|x| x.max(0.0)).collect(),
        })
    }
}

/// Everything needed to evaluate observation densities and per-component
/// LMMSE filters for one `(pilot, noise_var)` pair. Component `k` pairs tx
/// factor `k / n_rx_components` with rx factor `k % n_rx_components`.
#[derive(Clone, Debug)]
pub struct ObservationParams {
    pub(crate) n_tx: usize,
    pub(crate) n_rx: usize,
    pub(crate) n_p: usize,
    pub(crate) noise_var: f64,
    pub(crate) log_w: Vec<f64>,
    pub(crate) tx: Vec<TxFactor>,
    pub(crate) rx: Vec<RxFactor>,
    pub(crate) logdet: Vec<f64>,
}

/// Whitened coordinates of one observation for every component.
pub struct Whitened {
    /// `z[k]` is `N_rx x n_p`, column-major.
    z: Vec<Vec<c64>>,
    pub log_joint: Vec<f64>,
}

impl ObservationParams {
    pub(crate) fn new(
        weights: &[f64],
        cov_tx: &[CMat],
        cov_rx: &[CMat],
        pilot: MatRef<'_, c64>,
        noise_var: f64,
    ) -> Result<Self> {
        if !(noise_var > 0.0) {
            return Err(invalid("noise variance must be positive for observation densities"));
        }
        let n_tx = cov_tx[0].nrows();
        let n_rx = cov_rx[0].nrows();
        if pilot.ncols() != n_tx {
            return Err(crate::error::dim(format!(
                "pilot has {} columns, model has N_tx = {n_tx}",
                pilot.ncols()
            )));
        }
        let tx: Vec<TxFactor> = cov_tx
            .iter()
            .map(|c| TxFactor::new(c.as_ref(), pilot))
            .collect::<Result<_>>()?;
        let rx: Vec<RxFactor> = cov_rx
            .iter()
            .map(|c| RxFactor::new(c.as_ref()))
            .collect::<Result<_>>()?;
        let mut logdet = Vec::with_capacity(tx.len() * rx.len());
        for a in &tx {
            for b in &rx {
                let mut ld = 0.0;
                for &s in &a.s {
                    for &t in &b.t {
                        ld += (s * t + noise_var).ln();
                    }
                }
                logdet.push(ld);
            }
        }
        Ok(Self {
            n_tx,
            n_rx,
            n_p: pilot.nrows(),
            noise_var,
            log_w: weights.iter().map(|w| w.ln()).collect(),
            tx,
            rx,
            logdet,
        })
    }

    pub fn n_components(&self) -> usize {
        self.tx.len() * self.rx.len()
    }

    pub fn logdet(&self, k: usize) -> f64 {
        self.logdet[k]
    }

    pub fn whiten(&self, y: &[c64]) -> Whitened {
        let (nr, np) = (self.n_rx, self.n_p);
        assert_eq!(y.len(), nr * np, "observation length");
        let ymat = MatRef::from_column_major_slice(y, nr, np);
        let c0 = (nr * np) as f64 * std::f64::consts::PI.ln();
        let kr = self.rx.len();
        let mut z = Vec::with_capacity(self.n_components());
        let mut lj = Vec::with_capacity(self.n_components());
        for (a, tf) in self.tx.iter().enumerate() {
            let yv = ymat * &tf.vc;
            for (b, rf) in self.rx.iter().enumerate() {
                let zm = &rf.wh * &yv;
                let mut quad = 0.0;
                let mut flat = Vec::with_capacity(nr * np);
                for i in 0..np {
                    for l in 0..nr {
                        let v = zm[(l, i)];
                        quad += v.norm_sqr() / (tf.s[i] * rf.t[l] + self.noise_var);
                        flat.push(v);
                    }
                }
                let k = a * kr + b;
                lj.push(self.log_w[k] - c0 - self.logdet[k] - quad);
                z.push(flat);
            }
        }
        Whitened { z, log_joint: lj }
    }

    pub fn responsibilities(&self, y: &[c64]) -> Vec<f64> {
        softmax(&self.whiten(y).log_joint)
    }

    /// `W_b E Gᵀ_a` summed with the given per-component weights.
    fn combine(&self, w: &Whitened, coef: &[f64]) -> Vec<c64> {
        let (nr, np) = (self.n_rx, self.n_p);
        let kr = self.rx.len();
        let mut hmat = Mat::<c64>::zeros(nr, self.n_tx);
        for (a, tf) in self.tx.iter().enumerate() {
            let mut ma = Mat::<c64>::zeros(nr, np);
            let mut any = false;
            for (b, rf) in self.rx.iter().enumerate() {
                let k = a * kr + b;
                if coef[k] == 0.0 {
                    continue;
                }
                any = true;
                let e = Mat::from_fn(nr, np, |l, i| {
                    w.z[k][i * nr + l] * (coef[k] * rf.t[l] / (tf.s[i] * rf.t[l] + self.noise_var))
                });
                ma += &rf.w * &e;
            }
            if any {
                hmat += &ma * tf.g.transpose();
            }
        }
        linalg::vec_of(hmat.as_ref())
    }

    /// LMMSE estimate under component `k` alone.
    pub fn component_estimate(&self, k: usize, y: &[c64]) -> Vec<c64> {
        let w = self.whiten(y);
        let mut coef = vec![0.0; self.n_components()];
        coef[k] = 1.0;
        self.combine(&w, &coef)
    }

    /// Responsibility-weighted combination of per-component LMMSE estimates.
    pub fn estimate(&self, y: &[c64]) -> (Vec<c64>, Vec<f64>) {
        let w = self.whiten(y);
        let r = softmax(&w.log_joint);
        (self.combine(&w, &r), r)
    }
}

pub(crate) fn softmax(lj: &[f64]) -> Vec<f64> {
    let mx = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = lj.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
