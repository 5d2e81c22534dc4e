//! Sweeps, result rows and CSV output.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentSpec, Mode, PilotScheme, SweepKind};
use super::protocol::{evaluate_multi_user, evaluate_single_user, EvalContext, EvalPool, SchemeErrors};
use super::stats::{bootstrap_ci, mean, to_db};
use crate::channel_model::{generate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::gmm::{fit_kronecker_gmm, GmmModel};
use crate::linalg::CMat;
use crate::pilot_design::OptimizerOptions;
use crate::rng::{stream, stream_seed, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_name: String,
    pub sweep_value: f64,
    pub pilot_scheme: String,
    pub estimator: String,
    pub mean_nmse: f64,
    pub nmse_db: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub wall_ms: u64,
}

impl ResultRow {
    /// Failed rows carry NaN statistics and zero samples.
    pub fn failed(&self) -> bool {
        self.n_samples == 0
    }
}

/// Caps rayon workers at `FDDPL_THREADS` and keeps dense kernels
/// single-threaded, since parallelism lives at the sample level.
pub fn init_threads() -> usize {
    faer::set_global_parallelism(faer::Par::Seq);
    let cap = std::env::var("FDDPL_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok());
    if let Some(n) = cap.filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    rayon::current_num_threads()
}

pub fn training_set(spec: &ExperimentSpec) -> Result<Dataset> {
    generate_dataset(&mut stream(spec.scenario.seed, tag::TRAIN, 0, 0), &spec.scenario, spec.n_train)
}

/// `(K_tx, K_rx)` for a total count: `K_rx` is held at the configured value
/// unless there is a single receive antenna.
pub fn split_components(k: usize, k_rx: usize, n_rx: usize) -> Result<(usize, usize)> {
    let k_rx = if n_rx == 1 { 1 } else { k_rx };
    if k == 0 || k % k_rx != 0 {
        return Err(Error::Config(format!("K = {k} is not a multiple of k_rx = {k_rx}")));
    }
    Ok((k / k_rx, k_rx))
}

pub fn fit_model(spec: &ExperimentSpec, data: &Dataset, k_tx: usize, k_rx: usize) -> Result<GmmModel> {
    let k_rx = if spec.scenario.n_rx == 1 { 1 } else { k_rx };
    fit_kronecker_gmm(spec.scenario.seed, data, k_tx, k_rx, spec.em)
}

pub fn evaluate_scheme(
    ctx: &EvalContext<'_>,
    scheme: PilotScheme,
    snr_db: f64,
    opts: &OptimizerOptions,
    report: &[usize],
) -> Result<SchemeErrors> {
    let ests = &ctx.spec.estimators;
    match ctx.spec.mode {
        Mode::Su => evaluate_single_user(ctx, scheme, ests, snr_db, report),
        Mode::Mu => evaluate_multi_user(ctx, scheme, ests, snr_db, opts, report),
    }
}

#[derive(Clone)]
struct Point {
    value: f64,
    snr_db: f64,
    k: Option<usize>,
    opts: OptimizerOptions,
}

fn sweep_name(s: SweepKind) -> &'static str {
    match s {
        SweepKind::Snr => "snr_db",
        SweepKind::Block => "block",
        SweepKind::Components => "components",
        SweepKind::LMax => "l_max",
    }
}

/// Runs every sweep point and scheme. A failing point or scheme yields
/// flagged rows and the run continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let cfg = &spec.scenario;
    let data = training_set(spec)?;
    let sample_cov: Option<CMat> = spec
        .estimators
        .contains(&super::config::EstimatorKind::SampleLmmse)
        .then(|| data.sample_covariance());
    let pool = EvalPool::new(cfg, spec.n_eval)?;
    let base = Point { value: cfg.snr_db, snr_db: cfg.snr_db, k: None, opts: spec.optimizer.clone() };
    let points: Vec<Point> = match spec.sweep {
        SweepKind::Snr => spec.sweep_values.iter().map(|&v| Point { value: v, snr_db: v, ..base.clone() }).collect(),
        SweepKind::Block => vec![base],
        SweepKind::Components => spec
            .sweep_values
            .iter()
            .map(|&v| Point { value: v, k: Some(v as usize), ..base.clone() })
            .collect(),
        SweepKind::LMax => spec
            .sweep_values
            .iter()
            .map(|&v| {
                let mut opts = spec.optimizer.clone();
                opts.l_max = v as usize;
                Point { value: v, opts, ..base.clone() }
            })
            .collect(),
    };
    let report: Vec<usize> = match spec.sweep {
        SweepKind::Block => (0..=cfg.n_blocks).collect(),
        _ => vec![spec.eval_block],
    };
    let shared = match spec.sweep {
        SweepKind::Components => None,
        _ => Some(fit_model(spec, &data, spec.k_tx, spec.k_rx)),
    };
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<ResultRow>, value: f64, pilot: PilotScheme, est: usize, samples: &[f64], wall: u64| {
        let idx = rows.len() as u64;
        let (m, (lo, hi)) = if samples.is_empty() {
            (f64::NAN, (f64::NAN, f64::NAN))
        } else {
            (mean(samples), bootstrap_ci(samples, spec.bootstrap_resamples, stream_seed(cfg.seed, tag::BOOTSTRAP, idx, 0)))
        };
        rows.push(ResultRow {
            sweep_name: sweep_name(spec.sweep).to_string(),
            sweep_value: value,
            pilot_scheme: pilot.name().to_string(),
            estimator: spec.estimators[est].name().to_string(),
            mean_nmse: m,
            nmse_db: to_db(m),
            ci_lo: lo,
            ci_hi: hi,
            n_samples: samples.len(),
            seed: cfg.seed,
            wall_ms: if spec.record_wall_time { wall } else { 0 },
        });
    };
    let block_value = |i: usize, value: f64| if spec.sweep == SweepKind::Block { report[i] as f64 } else { value };
    for pt in &points {
        let fitted;
        let model: Result<&GmmModel> = match (&shared, pt.k) {
            (Some(m), _) => m.as_ref().map_err(|e| Error::Config(e.to_string())),
            (None, Some(k)) => {
                fitted = split_components(k, spec.k_rx, cfg.n_rx).and_then(|(kt, kr)| fit_model(spec, &data, kt, kr));
                fitted.as_ref().map_err(|e| Error::Config(e.to_string()))
            }
            (None, None) => unreachable!("component sweeps set k"),
        };
        let ctx = model.and_then(|m| EvalContext::new(spec, m, &pool, sample_cov.as_ref()));
        for &pilot in &spec.pilots {
            let t0 = Instant::now();
            let res = ctx.as_ref().map_err(|e| Error::Config(e.to_string())).and_then(|c| evaluate_scheme(c, pilot, pt.snr_db, &pt.opts, &report));
            let wall = t0.elapsed().as_millis() as u64;
            match res {
                Ok(se) => {
                    for (k, per_block) in se.errors.iter().enumerate() {
                        for (i, samples) in per_block.iter().enumerate() {
                            push(&mut rows, block_value(i, pt.value), pilot, k, samples, wall);
                        }
                    }
                }
                Err(e) => {
                    log::error!("{} = {}, pilot {pilot}: {e}", sweep_name(spec.sweep), pt.value);
                    for k in 0..spec.estimators.len() {
                        for i in 0..report.len() {
                            push(&mut rows, block_value(i, pt.value), pilot, k, &[], wall);
                        }
                    }
                }
            }
        }
    }
    if let Some(path) = &spec.output {
        write_results_csv(path, &rows)?;
    }
    Ok(rows)
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}
