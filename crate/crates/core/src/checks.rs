//! Quick invariant and oracle suite behind `fddpl check`.

use faer::Mat;
use rand::Rng;

use crate::c64;
use crate::channel_model::ChannelStats;
use crate::gmm::{fit_em_zero_mean, EmOptions, GmmModel};
use crate::harness::{bit_identical, evaluate_nmse};
use crate::linalg::{self, CMat};
use crate::pilot_design::{
    cmi_gradient, kron_diag_svd, lower_bound, optimize_pilot, sum_cmi, sum_cmi_dense, ObjectiveKind,
    OptimizerOptions, PilotMatrix,
};
use crate::rng::{cn01, cn_vec, stream, StreamRng};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn gaussian(r: &mut StreamRng, rows: usize, cols: usize) -> CMat {
    Mat::from_fn(rows, cols, |_, _| cn01(r))
}

fn psd(r: &mut StreamRng, n: usize, rank: usize) -> CMat {
    let a = gaussian(r, n, rank);
    let mut c = &a * a.adjoint();
    let tr = linalg::trace(c.as_ref()).re;
    c = linalg::scaled(c.as_ref(), n as f64 / tr);
    linalg::hermitize(&mut c);
    c
}

fn stats(r: &mut StreamRng, nt: usize, nr: usize, rank_rx: usize) -> ChannelStats {
    ChannelStats { cov_tx: psd(r, nt, nt), cov_rx: psd(r, nr, rank_rx), delta: Vec::new() }
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check { name, passed: worst <= tol, detail: format!("worst {worst:.3e}, tolerance {tol:.0e}") }
}

fn gradient(r: &mut StreamRng) -> crate::Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (nr, np, j) = (r.random_range(1..4), r.random_range(2..5), r.random_range(1..4));
        let st: Vec<ChannelStats> = (0..j).map(|_| stats(r, 8, nr, nr)).collect();
        let p = gaussian(r, np, 8);
        let dir = gaussian(r, np, 8);
        let g = cmi_gradient(p.as_ref(), &st, 0.5)?;
        let h = 1e-5;
        let f = |s: f64| sum_cmi((&p + linalg::scaled(dir.as_ref(), s)).as_ref(), &st, 0.5);
        let fd = (f(h)? - f(-h)?) / (2.0 * h);
        let an = 2.0 * linalg::inner(g.as_ref(), dir.as_ref()).re;
        worst = worst.max((fd - an).abs() / an.abs().max(1e-12));
    }
    Ok(worst)
}

fn bound(r: &mut StreamRng) -> crate::Result<(f64, f64)> {
    let (mut excess, mut gap) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..200 {
        let (nt, nr, np) = (r.random_range(1..7), r.random_range(1..4), r.random_range(1..5));
        let st = vec![stats(r, nt, nr, nr), stats(r, nt, nr, 1)];
        let p = gaussian(r, np, nt);
        excess = excess.max(lower_bound(p.as_ref(), &st[..1], 0.7)? - sum_cmi(p.as_ref(), &st[..1], 0.7)?);
        gap = gap.max((lower_bound(p.as_ref(), &st[1..], 0.7)? - sum_cmi(p.as_ref(), &st[1..], 0.7)?).abs());
    }
    Ok((excess, gap))
}

fn kron_svd(r: &mut StreamRng) -> crate::Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (np, nr) = (r.random_range(1..9), r.random_range(1..9));
        let d: Vec<f64> = (0..np * nr).map(|_| r.random_range(0.0..2.0)).collect();
        let terms = kron_diag_svd(&d, np, nr)?;
        for p in 0..np {
            for l in 0..nr {
                let rec: f64 = terms.iter().map(|t| t.alpha * t.beta[p] * t.gamma[l]).sum();
                worst = worst.max((rec - d[p * nr + l]).abs());
            }
        }
    }
    Ok(worst)
}

fn factored(r: &mut StreamRng) -> crate::Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (nt, nr, np) = (r.random_range(1..7), r.random_range(1..4), r.random_range(1..5));
        let st = vec![stats(r, nt, nr, nr), stats(r, nt, nr, nr)];
        let p = gaussian(r, np, nt);
        let (a, b) = (sum_cmi(p.as_ref(), &st, 0.3)?, sum_cmi_dense(p.as_ref(), &st, 0.3)?);
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    Ok(worst)
}

fn optimizer(r: &mut StreamRng) -> crate::Result<(f64, bool)> {
    let mut worst = 0.0f64;
    let mut repro = true;
    for i in 0..10 {
        let st = vec![stats(r, 8, 2, 2), stats(r, 8, 2, 2)];
        let opts = OptimizerOptions {
            l_max: 30,
            objective_kind: if i % 2 == 0 { ObjectiveKind::FullCmi } else { ObjectiveKind::LowerBound },
            ..OptimizerOptions::default()
        };
        let (p, tr) = optimize_pilot(&st, 0.1, 3, 1.0, &opts)?;
        worst = tr.powers.iter().fold(worst, |m, pw| m.max((pw - 3.0).abs()));
        repro &= bit_identical(&p, &optimize_pilot(&st, 0.1, 3, 1.0, &opts)?.0);
    }
    Ok((worst, repro))
}

fn em_single(r: &mut StreamRng) -> crate::Result<f64> {
    let x = gaussian(r, 4, 300);
    let fit = fit_em_zero_mean(r, x.as_ref(), 1, EmOptions::default())?;
    let sample = linalg::scaled((&x * x.adjoint()).as_ref(), 1.0 / 300.0);
    Ok(linalg::max_abs_diff(fit.covs[0].as_ref(), sample.as_ref()))
}

fn responsibilities(r: &mut StreamRng) -> crate::Result<f64> {
    let model = GmmModel::from_sides(
        &[1.0, 2.0, 3.0],
        (0..3).map(|_| psd(r, 4, 4)).collect(),
        &[1.0, 1.0],
        (0..2).map(|_| psd(r, 2, 2)).collect(),
    )?;
    let pilot = PilotMatrix::new(gaussian(r, 2, 4), 1.0);
    let params = model.observation_params(&pilot, 0.2)?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let y = cn_vec(r, 4);
        worst = worst.max((params.responsibilities(&y).iter().sum::<f64>() - 1.0).abs());
    }
    Ok(worst)
}

fn nmse_hand() -> crate::Result<f64> {
    let z = |a: f64, b: f64| c64::new(a, b);
    let t = vec![vec![z(1.0, 0.0), z(0.0, 1.0)], vec![z(2.0, 0.0), z(0.0, 0.0)]];
    let e = vec![vec![z(0.0, 0.0), z(0.0, 1.0)], vec![z(2.0, 1.0), z(1.0, 0.0)]];
    Ok((evaluate_nmse(&t, &e)? - 0.75).abs())
}

fn failed(name: &'static str, e: crate::Error) -> Check {
    Check { name, passed: false, detail: format!("error: {e}") }
}

/// Runs every check; finishes in a few seconds.
pub fn run_checks(seed: u64) -> Vec<Check> {
    let mut r = stream(seed, 0, 0, 0);
    let mut out = Vec::new();
    out.push(gradient(&mut r).map_or_else(|e| failed("gradient", e), |w| check("gradient", w, 1e-6)));
    match bound(&mut r) {
        Ok((excess, gap)) => {
            out.push(check("lower bound below objective", excess, 1e-9));
            out.push(check("lower bound tight for rank-one rx", gap, 1e-9));
        }
        Err(e) => out.push(failed("lower bound", e)),
    }
    out.push(kron_svd(&mut r).map_or_else(|e| failed("kron diag svd", e), |w| check("kron diag svd", w, 1e-12)));
    out.push(factored(&mut r).map_or_else(|e| failed("factored objective", e), |w| check("factored objective", w, 1e-10)));
    match optimizer(&mut r) {
        Ok((w, repro)) => {
            out.push(check("optimizer power budget", w, 1e-10));
            out.push(Check { name: "optimizer determinism", passed: repro, detail: String::new() });
        }
        Err(e) => out.push(failed("optimizer", e)),
    }
    out.push(em_single(&mut r).map_or_else(|e| failed("em single component", e), |w| check("em single component", w, 1e-10)));
    out.push(responsibilities(&mut r).map_or_else(|e| failed("responsibilities", e), |w| check("responsibilities", w, 1e-12)));
    out.push(nmse_hand().map_or_else(|e| failed("nmse", e), |w| check("nmse", w, 1e-15)));
    out
}
