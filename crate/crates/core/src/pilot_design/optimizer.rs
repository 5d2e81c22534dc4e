//! Fixed-point pilot optimizers for the sum CMI and its trace lower bound.

use faer::Mat;
use serde::{Deserialize, Serialize};

use super::cmi::{self, eigenvalues, gradient_with_rx, lower_bound, lower_bound_map};
use super::{DftSelection, PilotMatrix, dft_pilot_mu};
use crate::channel_model::ChannelStats;
use crate::error::{Error, Result, invalid};
use crate::linalg::{self, CMat};
use crate::rng::{self, cn01};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Dft,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    FullCmi,
    LowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub init_kind: InitKind,
    pub l_max: usize,
    pub epsilon: f64,
    pub objective_kind: ObjectiveKind,
    pub dft_oversampling: usize,
    /// Seed for random initialization and for random DFT column selection.
    pub init_seed: u64,
    /// Pick DFT columns with `init_seed` instead of evenly spaced.
    pub dft_random_columns: bool,
    pub record_iterates: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            init_kind: InitKind::Dft,
            l_max: 500,
            epsilon: 1e-3,
            objective_kind: ObjectiveKind::FullCmi,
            dft_oversampling: 2,
            init_seed: 0,
            dft_random_columns: false,
            record_iterates: false,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        if self.l_max == 0 {
            return Err(invalid("l_max must be at least 1"));
        }
        if self.dft_oversampling == 0 {
            return Err(invalid("dft_oversampling must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct OptimizerTrace {
    /// Objective at the initial point and after every iteration.
    pub objectives: Vec<f64>,
    /// Spectral norm of each iterate difference.
    pub step_norms: Vec<f64>,
    /// Total power of every iterate.
    pub powers: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Initial point followed by every iterate, when requested.
    pub iterates: Vec<CMat>,
}

fn initial_pilot(n_tx: usize, n_p: usize, rho: f64, opts: &OptimizerOptions) -> Result<PilotMatrix> {
    match opts.init_kind {
        InitKind::Dft => {
            let sel = if opts.dft_random_columns {
                DftSelection::Random(opts.init_seed)
            } else {
                DftSelection::EvenlySpaced
            };
            let p = dft_pilot_mu(n_tx, n_p, rho, opts.dft_oversampling, sel)?;
            PilotMatrix::normalized(p.p, rho)
        }
        InitKind::Random => {
            let mut r = rng::stream(opts.init_seed, rng::tag::OPT_INIT, 0, 0);
            let mut g = Mat::zeros(n_p, n_tx);
            for j in 0..n_tx {
                for i in 0..n_p {
                    g[(i, j)] = cn01(&mut r);
                }
            }
            PilotMatrix::normalized(g, rho)
        }
    }
}

fn run<F>(
    stats: &[ChannelStats],
    n_p: usize,
    rho: f64,
    opts: &OptimizerOptions,
    mut step: F,
) -> Result<(PilotMatrix, OptimizerTrace)>
where
    F: FnMut(&CMat) -> Result<(CMat, f64)>,
{
    opts.validate()?;
    if stats.is_empty() {
        return Err(invalid("optimizer needs at least one user"));
    }
    if !(rho > 0.0) {
        return Err(invalid("rho must be positive"));
    }
    let n_tx = stats[0].n_tx();
    let mut p = initial_pilot(n_tx, n_p, rho, opts)?;
    cmi::check_dims(p.p.as_ref(), stats)?;
    let mut trace = OptimizerTrace::default();
    trace.powers.push(p.total_power());
    if opts.record_iterates {
        trace.iterates.push(p.p.clone());
    }
    for _ in 0..opts.l_max {
        let (pt, obj) = step(&p.p)?;
        if trace.objectives.is_empty() {
            trace.objectives.push(obj);
        } else {
            *trace.objectives.last_mut().expect("nonempty") = obj;
        }
        if !pt.norm_l2().is_finite() {
            return Err(Error::NonFinite(format!(
                "iterate {} (objectives so far: {:?})",
                trace.iterations + 1,
                trace.objectives
            )));
        }
        let next = PilotMatrix::normalized(pt, rho)?;
        let diff = &next.p - &p.p;
        let sn = linalg::spectral_norm(diff.as_ref())?;
        p = next;
        trace.iterations += 1;
        trace.step_norms.push(sn);
        trace.powers.push(p.total_power());
        trace.objectives.push(f64::NAN);
        if opts.record_iterates {
            trace.iterates.push(p.p.clone());
        }
        if sn < opts.epsilon {
            trace.converged = true;
            break;
        }
    }
    Ok((p, trace))
}

/// Iterates `P <- normalize(∇ sum CMI(P))`, recomputing the tx-side
/// eigendecompositions and Kronecker-diagonal SVDs each step.
pub fn optimize_pilot_full(
    stats: &[ChannelStats],
    noise_var: f64,
    n_p: usize,
    rho: f64,
    opts: &OptimizerOptions,
) -> Result<(PilotMatrix, OptimizerTrace)> {
    let rx: Vec<Vec<f64>> = stats
        .iter()
        .map(|s| eigenvalues(s.cov_rx.as_ref()))
        .collect::<Result<_>>()?;
    let (p, mut trace) = run(stats, n_p, rho, opts, |p| gradient_with_rx(p.as_ref(), stats, &rx, noise_var))?;
    let last = cmi::sum_cmi(p.p.as_ref(), stats, noise_var)?;
    *trace.objectives.last_mut().expect("nonempty") = last;
    Ok((p, trace))
}

/// Iterates the trace-lower-bound map with the same normalization and stop rule.
pub fn optimize_pilot_lower_bound(
    stats: &[ChannelStats],
    noise_var: f64,
    n_p: usize,
    rho: f64,
    opts: &OptimizerOptions,
) -> Result<(PilotMatrix, OptimizerTrace)> {
    let (p, mut trace) = run(stats, n_p, rho, opts, |p| {
        Ok((
            lower_bound_map(p.as_ref(), stats, noise_var)?,
            lower_bound(p.as_ref(), stats, noise_var)?,
        ))
    })?;
    let last = lower_bound(p.p.as_ref(), stats, noise_var)?;
    *trace.objectives.last_mut().expect("nonempty") = last;
    Ok((p, trace))
}

pub fn optimize_pilot(
    stats: &[ChannelStats],
    noise_var: f64,
    n_p: usize,
    rho: f64,
    opts: &OptimizerOptions,
) -> Result<(PilotMatrix, OptimizerTrace)> {
    match opts.objective_kind {
        ObjectiveKind::FullCmi => optimize_pilot_full(stats, noise_var, n_p, rho, opts),
        ObjectiveKind::LowerBound => optimize_pilot_lower_bound(stats, noise_var, n_p, rho, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilot_design::{kkt_residual_full, kkt_residual_lower_bound, sum_cmi};
    use crate::rng::stream;

    fn rand_stats(nt: usize, nr: usize, rank: usize, seed: u64) -> ChannelStats {
        let mut r = stream(seed, 0, 0, 0);
        let a = Mat::from_fn(nt, rank, |_, _| cn01(&mut r));
        let b = Mat::from_fn(nr, nr, |_, _| cn01(&mut r));
        let mut ct = &a * a.adjoint();
        let mut cr = &b * b.adjoint();
        linalg::hermitize(&mut ct);
        linalg::hermitize(&mut cr);
        ChannelStats { cov_tx: ct, cov_rx: cr, delta: vec![] }
    }

    #[test]
    fn isotropic_case_keeps_power() {
        let st = ChannelStats { cov_tx: linalg::identity(6), cov_rx: linalg::identity(1), delta: vec![] };
        let (p, tr) = optimize_pilot_full(&[st], 0.1, 3, 2.0, &OptimizerOptions::default()).unwrap();
        assert!((p.total_power() - 6.0).abs() < 1e-10);
        assert!(tr.powers.iter().all(|x| (x - 6.0).abs() < 1e-10));
    }

    #[test]
    fn full_optimizer_converges_to_stationary_point() {
        let stats: Vec<_> = (0..2).map(|j| rand_stats(8, 2, 3, 40 + j)).collect();
        let opts = OptimizerOptions { l_max: 5000, ..Default::default() };
        let (p, tr) = optimize_pilot_full(&stats, 0.5, 3, 1.0, &opts).unwrap();
        assert!(tr.converged);
        assert!(kkt_residual_full(p.p.as_ref(), &stats, 0.5).unwrap() < 1e-3);
        assert!(tr.objectives.last().unwrap() >= &tr.objectives[0]);
        let direct = sum_cmi(p.p.as_ref(), &stats, 0.5).unwrap();
        assert!((direct - tr.objectives.last().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_optimizer_converges() {
        let stats: Vec<_> = (0..3).map(|j| rand_stats(6, 3, 2, 50 + j)).collect();
        let opts = OptimizerOptions { l_max: 5000, objective_kind: ObjectiveKind::LowerBound, ..Default::default() };
        let (p, tr) = optimize_pilot(&stats, 0.2, 2, 1.0, &opts).unwrap();
        assert!(tr.converged);
        assert!(kkt_residual_lower_bound(p.p.as_ref(), &stats, 0.2).unwrap() < 1e-3);
    }

    #[test]
    fn deterministic_runs_are_bit_identical() {
        let stats: Vec<_> = (0..2).map(|j| rand_stats(8, 2, 3, 60 + j)).collect();
        let opts = OptimizerOptions { l_max: 40, ..Default::default() };
        let (a, _) = optimize_pilot_full(&stats, 0.5, 3, 1.0, &opts).unwrap();
        let (b, _) = optimize_pilot_full(&stats, 0.5, 3, 1.0, &opts).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn rejects_bad_options() {
        let st = rand_stats(4, 1, 2, 1);
        let o = OptimizerOptions { epsilon: 0.0, ..Default::default() };
        assert!(optimize_pilot_full(&[st.clone()], 0.5, 2, 1.0, &o).is_err());
        let o = OptimizerOptions { l_max: 0, ..Default::default() };
        assert!(optimize_pilot_full(&[st], 0.5, 2, 1.0, &o).is_err());
        assert!(optimize_pilot_full(&[], 0.5, 2, 1.0, &OptimizerOptions::default()).is_err());
    }
}
