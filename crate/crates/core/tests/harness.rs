mod common;

use std::path::PathBuf;

use fddpilot::channel_model::{noise_var_from_snr, ChannelStats};
use fddpilot::harness::{
    bit_identical, fit_model, read_results_csv, run_experiment, run_multi_user_protocol, run_single_user_protocol,
    training_set, EstimatorKind, EvalContext, EvalPool, ExperimentSpec, PilotScheme, ResultRow,
};
use fddpilot::pilot_design::{genie_pilot_su, optimize_pilot, ObjectiveKind, OptimizerOptions};
use fddpilot::rng::stream;

use common::*;

const HEADER: &str = "sweep_name,sweep_value,pilot_scheme,estimator,mean_nmse,nmse_db,ci_lo,ci_hi,n_samples,seed,wall_ms";

fn tiny(mode: &str) -> ExperimentSpec {
    let mut s = ExperimentSpec::default();
    s.apply_overrides([
        ("mode", mode),
        ("n_tx", "6"),
        ("n_rx", "2"),
        ("n_pilots", "2"),
        ("n_users", "2"),
        ("n_blocks", "3"),
        ("seed", "11"),
        ("n_train", "600"),
        ("n_eval", "30"),
        ("n_con", "4"),
        ("k_tx", "3"),
        ("k_rx", "2"),
        ("em_max_iters", "15"),
        ("l_max", "20"),
        ("eval_block", "2"),
        ("bootstrap_resamples", "200"),
        ("record_wall_time", "false"),
        ("sweep", "snr"),
        ("sweep_values", "0,10"),
        ("pilots", "gmm,dft,random,genie"),
        ("estimators", "gmm,genie_lmmse,sample_lmmse,omp"),
    ])
    .unwrap();
    s
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fddpilot-harness-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn same_rows(a: &[ResultRow], b: &[ResultRow]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.sweep_name == y.sweep_name
                && x.pilot_scheme == y.pilot_scheme
                && x.estimator == y.estimator
                && x.sweep_value.to_bits() == y.sweep_value.to_bits()
                && x.mean_nmse.to_bits() == y.mean_nmse.to_bits()
                && x.ci_lo.to_bits() == y.ci_lo.to_bits()
                && x.ci_hi.to_bits() == y.ci_hi.to_bits()
                && x.n_samples == y.n_samples
        })
}

#[test]
fn same_seed_gives_identical_csv() {
    for mode in ["su", "mu"] {
        let mut spec = tiny(mode);
        let (a, b) = (scratch(&format!("{mode}-a.csv")), scratch(&format!("{mode}-b.csv")));
        spec.output = Some(a.clone());
        let rows = run_experiment(&spec).unwrap();
        spec.output = Some(b.clone());
        run_experiment(&spec).unwrap();
        let (ta, tb) = (std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
        assert_eq!(ta, tb);
        assert_eq!(ta.lines().next().unwrap(), HEADER);
        assert_eq!(rows.len(), 2 * 4 * 4);
        assert!(rows.iter().all(|r| !r.failed() && r.mean_nmse.is_finite() && r.ci_lo <= r.mean_nmse && r.mean_nmse <= r.ci_hi));
        assert!(same_rows(&read_results_csv(&a).unwrap(), &rows));
    }
}

#[test]
fn length_one_sweep_gives_one_row_per_scheme() {
    let mut spec = tiny("su");
    spec.set("sweep_values", "5").unwrap();
    let rows = run_experiment(&spec).unwrap();
    assert_eq!(rows.len(), spec.schemes().len());
    for (r, s) in rows.iter().zip(spec.schemes()) {
        assert_eq!((r.pilot_scheme.as_str(), r.estimator.as_str()), (s.pilot.name(), s.estimator.name()));
        assert_eq!(r.n_samples, spec.n_eval);
    }
}

#[test]
fn block_and_component_sweeps() {
    let mut spec = tiny("su");
    spec.apply_overrides([("sweep", "block"), ("pilots", "gmm"), ("estimators", "gmm")]).unwrap();
    let rows = run_experiment(&spec).unwrap();
    let blocks: Vec<f64> = rows.iter().map(|r| r.sweep_value).collect();
    assert_eq!(blocks, vec![0.0, 1.0, 2.0, 3.0]);
    spec.apply_overrides([("sweep", "components"), ("sweep_values", "2,6")]).unwrap();
    let rows = run_experiment(&spec).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.sweep_name == "components" && !r.failed()));
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = tiny("su");
    spec.apply_overrides([("sweep", "l_max"), ("sweep_values", "10")]).unwrap();
    assert!(run_experiment(&spec).is_err());
    assert!(tiny("su").set("no_such_key", "1").is_err());
    assert!(tiny("su").set("n_tx", "many").is_err());
}

#[test]
fn results_do_not_depend_on_worker_count() {
    for mode in ["su", "mu"] {
        let spec = tiny(mode);
        let runs: Vec<Vec<ResultRow>> = [1, 3]
            .into_iter()
            .map(|n| {
                rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| run_experiment(&spec).unwrap())
            })
            .collect();
        assert!(same_rows(&runs[0], &runs[1]), "{mode}");
    }
}

struct Fixture {
    spec: ExperimentSpec,
    model: fddpilot::gmm::GmmModel,
    pool: EvalPool,
    cov: CMat,
}

fn fixture(mode: &str) -> Fixture {
    let spec = tiny(mode);
    let data = training_set(&spec).unwrap();
    let model = fit_model(&spec, &data, spec.k_tx, spec.k_rx).unwrap();
    let pool = EvalPool::new(&spec.scenario, spec.n_eval).unwrap();
    Fixture { cov: data.sample_covariance(), spec, model, pool }
}

#[test]
fn truncated_horizons_replay_identically() {
    let f = fixture("su");
    let ctx = EvalContext::new(&f.spec, &f.model, &f.pool, Some(&f.cov)).unwrap();
    let ests = [EstimatorKind::Gmm, EstimatorKind::GenieLmmse];
    let nv = noise_var_from_snr(10.0);
    for u in 0..10 {
        let long = run_single_user_protocol(&ctx, u, PilotScheme::Gmm, &ests, nv, &[0, 1, 2, 3]).unwrap();
        let short = run_single_user_protocol(&ctx, u, PilotScheme::Gmm, &ests, nv, &[0, 1]).unwrap();
        for k in 0..ests.len() {
            assert_eq!(long[k][..2], short[k][..]);
        }
        let dft = run_single_user_protocol(&ctx, u, PilotScheme::Dft, &ests, nv, &[0]).unwrap();
        let only = run_single_user_protocol(&ctx, u, PilotScheme::Gmm, &ests, nv, &[0]).unwrap();
        assert_eq!(dft, only);
    }

    let f = fixture("mu");
    let ctx = EvalContext::new(&f.spec, &f.model, &f.pool, Some(&f.cov)).unwrap();
    let opts = f.spec.optimizer.clone();
    for c in 0..3 {
        let long = run_multi_user_protocol(&ctx, c, PilotScheme::Gmm, &ests, nv, &opts, &[0, 1, 2, 3]).unwrap();
        let short = run_multi_user_protocol(&ctx, c, PilotScheme::Gmm, &ests, nv, &opts, &[0, 1]).unwrap();
        assert_eq!(long.pilot_checks, 3 * f.spec.scenario.n_users);
        for k in 0..ests.len() {
            assert_eq!(long.errors[k][..2], short.errors[k][..]);
        }
    }
}

#[test]
fn single_component_codebook_has_one_entry() {
    let spec = tiny("su");
    let data = training_set(&spec).unwrap();
    let model = fit_model(&spec, &data, 1, 1).unwrap();
    let pool = EvalPool::new(&spec.scenario, 4).unwrap();
    let cov = data.sample_covariance();
    let ctx = EvalContext::new(&spec, &model, &pool, Some(&cov)).unwrap();
    assert_eq!(ctx.codebook().unwrap().len(), 1);
}

#[test]
fn single_user_optimizer_spans_codebook_subspace() {
    let mut r = stream(21, 0, 0, 0);
    for _ in 0..10 {
        let st = random_stats(&mut r, 8, 2, 8, 2);
        let n_p = 3;
        let opts = OptimizerOptions {
            objective_kind: ObjectiveKind::LowerBound,
            epsilon: 1e-12,
            l_max: 100_000,
            ..OptimizerOptions::default()
        };
        let (p, _) = optimize_pilot(std::slice::from_ref(&st), noise_var_from_snr(10.0), n_p, 1.0, &opts).unwrap();
        let b = genie_pilot_su(st.cov_tx.as_ref(), n_p, 1.0).unwrap().p;
        let proj = &p.p * b.adjoint() * solve((&b * b.adjoint()).as_ref(), b.as_ref());
        let residual = frob((&p.p - &proj).as_ref()) / frob(p.p.as_ref());
        assert!(residual < 1e-3, "{residual}");
    }
}

#[test]
fn identical_users_give_single_user_pilot() {
    let mut r = stream(22, 0, 0, 0);
    for j in [2, 3, 4] {
        let st = random_stats(&mut r, 8, 3, 8, 3);
        let opts = OptimizerOptions { l_max: 200, ..OptimizerOptions::default() };
        let nv = noise_var_from_snr(5.0);
        let (one, _) = optimize_pilot(std::slice::from_ref(&st), nv, 3, 1.0, &opts).unwrap();
        let many: Vec<ChannelStats> = vec![st; j];
        let (all, _) = optimize_pilot(&many, nv, 3, 1.0, &opts).unwrap();
        if j == 2 {
            assert!(bit_identical(&one, &all));
        }
        assert!(max_abs(one.p.as_ref(), all.p.as_ref()) < 1e-10);
    }
}
