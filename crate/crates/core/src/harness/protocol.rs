//! Online feedback/feedforward protocols over fading blocks.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::seq::index;
use rayon::prelude::*;

use super::config::{EstimatorKind, ExperimentSpec, PilotScheme};
use crate::c64;
use crate::channel_model::{
    apply_pilot, sample_delta, stats_from_delta, ChannelSampler, ChannelStats, ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::estimators::{channel_dictionary, DenseLmmse, KroneckerLmmse, OmpGenie};
use crate::gmm::{feedback_from, GmmModel, ObservationParams};
use crate::linalg::CMat;
use crate::pilot_design::{
    build_pilot_codebook, dft_pilot_mu, dft_pilot_su, genie_pilot_su, optimize_pilot, random_pilot,
    DftSelection, OptimizerOptions, PilotCodebook, PilotMatrix,
};
use crate::rng::{cn_vec, stream, tag};

pub struct EvalUser {
    pub stats: ChannelStats,
    pub sampler: ChannelSampler,
}

/// Evaluation users with angles drawn from their own streams, disjoint
/// from the training set.
pub struct EvalPool {
    pub scenario: ScenarioConfig,
    pub users: Vec<EvalUser>,
}

impl EvalPool {
    pub fn new(cfg: &ScenarioConfig, n: usize) -> Result<Self> {
        cfg.validate()?;
        let users = (0..n)
            .into_par_iter()
            .map(|u| {
                let stats = eval_user_stats(cfg, u)?;
                let sampler = stats.sampler()?;
                Ok(EvalUser { stats, sampler })
            })
            .collect::<Result<_>>()?;
        Ok(Self { scenario: cfg.clone(), users })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

pub fn eval_user_stats(cfg: &ScenarioConfig, u: usize) -> Result<ChannelStats> {
    let mut r = stream(cfg.seed, tag::EVAL_STATS, u as u64, 0);
    stats_from_delta(cfg, &sample_delta(&mut r, cfg))
}

/// Channel and noise for one `(terminal, block)` pair. Every pilot scheme
/// sees the same draws.
pub fn block_draw(seed: u64, terminal: u64, block: usize, sampler: &ChannelSampler, n_obs: usize) -> (Vec<c64>, Vec<c64>) {
    let h = sampler.draw(&mut stream(seed, tag::CHANNEL, terminal, block as u64));
    let n = cn_vec(&mut stream(seed, tag::NOISE, terminal, block as u64), n_obs);
    (h, n)
}

fn noisy(h: &[c64], noise: &[c64], pilot: &PilotMatrix, n_rx: usize, noise_var: f64) -> Vec<c64> {
    let s = noise_var.sqrt();
    let mut y = apply_pilot(h, pilot.p.as_ref(), n_rx);
    for (v, n) in y.iter_mut().zip(noise) {
        *v += n * s;
    }
    y
}

/// `‖h − ĥ‖² / N` for one sample.
pub fn sample_error(h: &[c64], h_hat: &[c64]) -> f64 {
    h.iter().zip(h_hat).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / h.len() as f64
}

pub fn bit_identical(a: &PilotMatrix, b: &PilotMatrix) -> bool {
    a.p.shape() == b.p.shape()
        && a.rho.to_bits() == b.rho.to_bits()
        && (0..a.p.ncols()).all(|j| {
            (0..a.p.nrows()).all(|i| {
                let (x, y) = (a.p[(i, j)], b.p[(i, j)]);
                x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()
            })
        })
}

/// Estimators prepared for one pilot.
struct Prepared {
    gmm: Option<Arc<ObservationParams>>,
    dense: Option<Arc<DenseLmmse>>,
    omp: Option<Arc<OmpGenie>>,
}

/// Shared state for evaluating one model at one scenario.
pub struct EvalContext<'a> {
    pub spec: &'a ExperimentSpec,
    pub model: &'a GmmModel,
    pub pool: &'a EvalPool,
    pub sample_cov: Option<&'a CMat>,
    pub random_pilot: PilotMatrix,
    codebook: Option<PilotCodebook>,
    dictionary: Option<CMat>,
    dense: RwLock<HashMap<(u64, u64), Arc<DenseLmmse>>>,
    omp: RwLock<HashMap<u64, Arc<OmpGenie>>>,
}

const CACHE_CAP: usize = 512;

impl<'a> EvalContext<'a> {
    pub fn new(
        spec: &'a ExperimentSpec,
        model: &'a GmmModel,
        pool: &'a EvalPool,
        sample_cov: Option<&'a CMat>,
    ) -> Result<Self> {
        let cfg = &spec.scenario;
        if model.n_tx != cfg.n_tx || model.n_rx != cfg.n_rx {
            return Err(Error::Config("model dimensions do not match the scenario".into()));
        }
        let random_pilot = random_pilot(
            &mut stream(cfg.seed, tag::PILOT, 0, 0),
            cfg.n_tx,
            cfg.n_pilots,
            cfg.rho,
        )?;
        let codebook = if spec.pilots.contains(&PilotScheme::Gmm) {
            Some(build_pilot_codebook(model, cfg.n_pilots, cfg.rho)?)
        } else {
            None
        };
        let dictionary = spec
            .estimators
            .contains(&EstimatorKind::Omp)
            .then(|| channel_dictionary(cfg.n_tx, cfg.n_rx, spec.omp_oversampling));
        if spec.estimators.contains(&EstimatorKind::SampleLmmse) && sample_cov.is_none() {
            return Err(Error::Config("sample_lmmse needs a sample covariance".into()));
        }
        Ok(Self {
            spec,
            model,
            pool,
            sample_cov,
            random_pilot,
            codebook,
            dictionary,
            dense: RwLock::default(),
            omp: RwLock::default(),
        })
    }

    pub fn codebook(&self) -> Option<&PilotCodebook> {
        self.codebook.as_ref()
    }

    fn dense_for(&self, pilot: &PilotMatrix, nv: f64, cached: bool) -> Result<Arc<DenseLmmse>> {
        let cov = self.sample_cov.ok_or_else(|| Error::Config("no sample covariance".into()))?;
        let key = (pilot.fingerprint(), nv.to_bits());
        if cached {
            if let Some(d) = self.dense.read().expect("cache lock").get(&key) {
                return Ok(d.clone());
            }
        }
        let d = Arc::new(DenseLmmse::new(cov.as_ref(), pilot, self.spec.scenario.n_rx, nv)?);
        if cached {
            let mut w = self.dense.write().expect("cache lock");
            if w.len() >= CACHE_CAP {
                w.clear();
            }
            w.insert(key, d.clone());
        }
        Ok(d)
    }

    fn omp_for(&self, pilot: &PilotMatrix, cached: bool) -> Result<Arc<OmpGenie>> {
        let dict = self.dictionary.as_ref().ok_or_else(|| Error::Config("no OMP dictionary".into()))?;
        let key = pilot.fingerprint();
        if cached {
            if let Some(d) = self.omp.read().expect("cache lock").get(&key) {
                return Ok(d.clone());
            }
        }
        let d = Arc::new(OmpGenie::new(dict.clone(), pilot, self.spec.scenario.n_rx)?);
        if cached {
            let mut w = self.omp.write().expect("cache lock");
            if w.len() >= CACHE_CAP {
                w.clear();
            }
            w.insert(key, d.clone());
        }
        Ok(d)
    }

    fn prepare(&self, pilot: &PilotMatrix, nv: f64, ests: &[EstimatorKind], need_gmm: bool, cached: bool) -> Result<Prepared> {
        let gmm = if need_gmm || ests.contains(&EstimatorKind::Gmm) {
            Some(if cached {
                self.model.observation_params(pilot, nv)?
            } else {
                Arc::new(ObservationParams::new(
                    &self.model.weights,
                    &self.model.cov_tx,
                    &self.model.cov_rx,
                    pilot.p.as_ref(),
                    nv,
                )?)
            })
        } else {
            None
        };
        let dense = match ests.contains(&EstimatorKind::SampleLmmse) {
            true => Some(self.dense_for(pilot, nv, cached)?),
            false => None,
        };
        let omp = match ests.contains(&EstimatorKind::Omp) {
            true => Some(self.omp_for(pilot, cached)?),
            false => None,
        };
        Ok(Prepared { gmm, dense, omp })
    }

    /// Squared errors of every estimator on one observation.
    fn errors(
        &self,
        prep: &Prepared,
        ests: &[EstimatorKind],
        y: &[c64],
        h: &[c64],
        pilot: &PilotMatrix,
        stats: &ChannelStats,
        nv: f64,
    ) -> Result<Vec<f64>> {
        ests.iter()
            .map(|e| {
                let h_hat = match e {
                    EstimatorKind::Gmm => prep.gmm.as_ref().expect("prepared").estimate(y).0,
                    EstimatorKind::GenieLmmse => KroneckerLmmse::from_stats(stats, pilot, nv)?.estimate(y),
                    EstimatorKind::SampleLmmse => prep.dense.as_ref().expect("prepared").estimate(y),
                    EstimatorKind::Omp => prep.omp.as_ref().expect("prepared").estimate(y, h),
                };
                Ok(sample_error(h, &h_hat))
            })
            .collect()
    }

    fn initial_mu_pilot(&self) -> Result<PilotMatrix> {
        let cfg = &self.spec.scenario;
        dft_pilot_mu(cfg.n_tx, cfg.n_pilots, cfg.rho, self.spec.optimizer.dft_oversampling, DftSelection::EvenlySpaced)
    }
}

/// Per-estimator, per-reported-block squared errors for one terminal.
pub type BlockErrors = Vec<Vec<f64>>;

/// Runs blocks `0..=t_end` for one evaluation user and returns
/// `errors[estimator][i]` for block `report[i]`.
pub fn run_single_user_protocol(
    ctx: &EvalContext<'_>,
    user: usize,
    scheme: PilotScheme,
    ests: &[EstimatorKind],
    noise_var: f64,
    report: &[usize],
) -> Result<BlockErrors> {
    let cfg = &ctx.spec.scenario;
    let eu = ctx.pool.users.get(user).ok_or_else(|| Error::Config(format!("no evaluation user {user}")))?;
    let t_end = report.iter().copied().max().unwrap_or(0);
    let n_obs = cfg.n_pilots * cfg.n_rx;
    let mut pilot = match scheme {
        PilotScheme::Gmm | PilotScheme::Dft => dft_pilot_su(cfg.n_tx, cfg.n_pilots, cfg.rho)?,
        PilotScheme::Random => ctx.random_pilot.clone(),
        PilotScheme::Genie => genie_pilot_su(eu.stats.cov_tx.as_ref(), cfg.n_pilots, cfg.rho)?,
    };
    let adaptive = scheme == PilotScheme::Gmm;
    let mut out = vec![vec![0.0; report.len()]; ests.len()];
    for t in 0..=t_end {
        let (h, noise) = block_draw(cfg.seed, user as u64, t, &eu.sampler, n_obs);
        let y = noisy(&h, &noise, &pilot, cfg.n_rx, noise_var);
        let reported: Vec<usize> = (0..report.len()).filter(|&i| report[i] == t).collect();
        if reported.is_empty() && !(adaptive && t < t_end) {
            continue;
        }
        let prep = ctx.prepare(&pilot, noise_var, if reported.is_empty() { &[] } else { ests }, adaptive, true)?;
        if !reported.is_empty() {
            let e = ctx.errors(&prep, ests, &y, &h, &pilot, &eu.stats, noise_var)?;
            for (k, v) in e.into_iter().enumerate() {
                for &i in &reported {
                    out[k][i] = v;
                }
            }
        }
        if adaptive && t < t_end {
            let resp = prep.gmm.as_ref().expect("prepared").responsibilities(&y);
            let k_star = feedback_from(&resp).k_star;
            pilot = ctx.codebook.as_ref().expect("codebook built").get(k_star).clone();
        }
    }
    Ok(out)
}

/// Errors for one multi-user constellation: `errors[estimator][i]` holds
/// the `J` terminal errors of block `report[i]`.
pub struct ConstellationErrors {
    pub errors: Vec<Vec<Vec<f64>>>,
    pub pilot_checks: usize,
}

/// Pool indices of the terminals in constellation `c`.
pub fn constellation_users(seed: u64, c: usize, pool: usize, j: usize) -> Vec<usize> {
    index::sample(&mut stream(seed, tag::CONSTELLATION, c as u64, 0), pool, j).into_vec()
}

fn optimize(stats: &[ChannelStats], nv: f64, cfg: &ScenarioConfig, opts: &OptimizerOptions) -> Result<PilotMatrix> {
    Ok(optimize_pilot(stats, nv, cfg.n_pilots, cfg.rho, opts)?.0)
}

fn component_stats(model: &GmmModel, k: usize) -> ChannelStats {
    ChannelStats { cov_tx: model.component_tx(k).clone(), cov_rx: model.component_rx(k).clone(), delta: Vec::new() }
}

pub fn run_multi_user_protocol(
    ctx: &EvalContext<'_>,
    c: usize,
    scheme: PilotScheme,
    ests: &[EstimatorKind],
    noise_var: f64,
    opts: &OptimizerOptions,
    report: &[usize],
) -> Result<ConstellationErrors> {
    let cfg = &ctx.spec.scenario;
    let n_users = cfg.n_users;
    let users = constellation_users(cfg.seed, c, ctx.pool.len(), n_users);
    let t_end = report.iter().copied().max().unwrap_or(0);
    let n_obs = cfg.n_pilots * cfg.n_rx;
    let mut pilot = match scheme {
        PilotScheme::Random => ctx.random_pilot.clone(),
        _ => ctx.initial_mu_pilot()?,
    };
    let mut genie_pilot: Option<PilotMatrix> = None;
    let mut out = vec![vec![Vec::with_capacity(n_users); report.len()]; ests.len()];
    let mut checks = 0;
    for t in 0..=t_end {
        let draws: Vec<(Vec<c64>, Vec<c64>)> = users
            .iter()
            .enumerate()
            .map(|(j, &u)| {
                let term = (c * n_users + j) as u64;
                block_draw(cfg.seed, term, t, &ctx.pool.users[u].sampler, n_obs)
            })
            .collect();
        let ys: Vec<Vec<c64>> = draws.iter().map(|(h, n)| noisy(h, n, &pilot, cfg.n_rx, noise_var)).collect();
        let reported: Vec<usize> = (0..report.len()).filter(|&i| report[i] == t).collect();
        let feedback = scheme == PilotScheme::Gmm && t < t_end;
        if !reported.is_empty() || feedback {
            let prep = ctx.prepare(&pilot, noise_var, if reported.is_empty() { &[] } else { ests }, feedback, false)?;
            if !reported.is_empty() {
                for (j, &u) in users.iter().enumerate() {
                    let e = ctx.errors(&prep, ests, &ys[j], &draws[j].0, &pilot, &ctx.pool.users[u].stats, noise_var)?;
                    for (k, v) in e.into_iter().enumerate() {
                        for &i in &reported {
                            out[k][i].push(v);
                        }
                    }
                }
            }
            if feedback {
                let params = prep.gmm.as_ref().expect("prepared");
                let indices: Vec<usize> = ys.iter().map(|y| feedback_from(&params.responsibilities(y)).k_star).collect();
                let stats: Vec<ChannelStats> = indices.iter().map(|&k| component_stats(ctx.model, k)).collect();
                let bs = optimize(&stats, noise_var, cfg, opts)?;
                if ctx.spec.verify_common_knowledge {
                    // Each terminal rebuilds the pilot from the broadcast indices.
                    let mts: Vec<Result<PilotMatrix>> = (0..n_users)
                        .into_par_iter()
                        .map(|_| {
                            let s: Vec<ChannelStats> = indices.iter().map(|&k| component_stats(ctx.model, k)).collect();
                            optimize(&s, noise_var, cfg, opts)
                        })
                        .collect();
                    for (j, mt) in mts.into_iter().enumerate() {
                        checks += 1;
                        if !bit_identical(&bs, &mt?) {
                            return Err(Error::PilotDivergence { terminal: j, block: t + 1 });
                        }
                    }
                }
                pilot = bs;
            }
        }
        if scheme == PilotScheme::Genie && t < t_end {
            if genie_pilot.is_none() {
                let stats: Vec<ChannelStats> = users.iter().map(|&u| ctx.pool.users[u].stats.clone()).collect();
                genie_pilot = Some(optimize(&stats, noise_var, cfg, opts)?);
            }
            pilot = genie_pilot.clone().expect("set above");
        }
    }
    Ok(ConstellationErrors { errors: out, pilot_checks: checks })
}

/// `errors[estimator][i][sample]` for every reported block.
pub struct SchemeErrors {
    pub errors: Vec<Vec<Vec<f64>>>,
    pub pilot_checks: usize,
}

pub fn evaluate_single_user(
    ctx: &EvalContext<'_>,
    scheme: PilotScheme,
    ests: &[EstimatorKind],
    snr_db: f64,
    report: &[usize],
) -> Result<SchemeErrors> {
    let nv = crate::channel_model::noise_var_from_snr(snr_db);
    let per_user: Vec<BlockErrors> = (0..ctx.pool.len())
        .into_par_iter()
        .map(|u| run_single_user_protocol(ctx, u, scheme, ests, nv, report))
        .collect::<Result<_>>()?;
    let errors = (0..ests.len())
        .map(|k| (0..report.len()).map(|i| per_user.iter().map(|e| e[k][i]).collect()).collect())
        .collect();
    Ok(SchemeErrors { errors, pilot_checks: 0 })
}

pub fn evaluate_multi_user(
    ctx: &EvalContext<'_>,
    scheme: PilotScheme,
    ests: &[EstimatorKind],
    snr_db: f64,
    opts: &OptimizerOptions,
    report: &[usize],
) -> Result<SchemeErrors> {
    let nv = crate::channel_model::noise_var_from_snr(snr_db);
    let per_con: Vec<ConstellationErrors> = (0..ctx.spec.n_con)
        .into_par_iter()
        .map(|c| run_multi_user_protocol(ctx, c, scheme, ests, nv, opts, report))
        .collect::<Result<_>>()?;
    let errors = (0..ests.len())
        .map(|k| {
            (0..report.len())
                .map(|i| per_con.iter().flat_map(|e| e.errors[k][i].iter().copied()).collect())
                .collect()
        })
        .collect();
    let pilot_checks = per_con.iter().map(|e| e.pilot_checks).sum();
    Ok(SchemeErrors { errors, pilot_checks })
}
