mod common;

use faer::Mat;
use fddpilot::c64;
use fddpilot::channel_model::{apply_pilot, noise_var_from_snr, ChannelStats, ScenarioConfig};
use fddpilot::estimators::{channel_dictionary, genie_lmmse, OmpGenie};
use fddpilot::harness::{evaluate_nmse, fit_model, training_set, EvalPool, ExperimentSpec};
use fddpilot::pilot_design::{dft_pilot_su, PilotMatrix};
use fddpilot::rng::{cn01, cn_vec, stream};

use common::*;

#[test]
fn identity_covariance_draws_have_identity_sample_covariance() {
    let st = ChannelStats { cov_tx: eye(4), cov_rx: eye(3), delta: vec![] };
    let s = st.sampler().unwrap();
    let mut r = stream(1, 0, 0, 0);
    let m = 100_000;
    let n = 12;
    let mut acc = Mat::<c64>::zeros(n, n);
    for _ in 0..m {
        let h = s.draw(&mut r);
        for j in 0..n {
            for i in 0..n {
                acc[(i, j)] += h[i] * h[j].conj();
            }
        }
    }
    let acc = Mat::from_fn(n, n, |i, j| acc[(i, j)] / m as f64);
    assert!(max_abs(acc.as_ref(), eye(n).as_ref()) < 0.05);
}

#[test]
fn zero_estimate_has_unit_nmse() {
    let st = {
        let mut r = stream(2, 0, 0, 0);
        random_stats(&mut r, 6, 2, 6, 2)
    };
    let s = st.sampler().unwrap();
    let mut r = stream(2, 1, 0, 0);
    let truths: Vec<Vec<c64>> = (0..20_000).map(|_| s.draw(&mut r)).collect();
    let zeros = vec![vec![c64::new(0.0, 0.0); 12]; truths.len()];
    let v = evaluate_nmse(&truths, &zeros).unwrap();
    assert!((v - 1.0).abs() < 0.03, "{v}");
    assert_eq!(evaluate_nmse(&truths, &truths).unwrap(), 0.0);
}

#[test]
fn genie_error_is_orthogonal_to_observation() {
    let mut r = stream(3, 0, 0, 0);
    let st = random_stats(&mut r, 4, 2, 4, 2);
    let pilot = PilotMatrix::new(gaussian(&mut r, 2, 4), 1.0);
    let s = st.sampler().unwrap();
    let nv: f64 = 0.5;
    let m = 10_000;
    let (n, no) = (8, 4);
    let mut prods = vec![Vec::with_capacity(m); n * no];
    for _ in 0..m {
        let h = s.draw(&mut r);
        let y: Vec<c64> = apply_pilot(&h, pilot.p.as_ref(), 2)
            .into_iter()
            .map(|v| v + cn01(&mut r) * nv.sqrt())
            .collect();
        let e: Vec<c64> = h.iter().zip(genie_lmmse(&y, &pilot, &st, nv).unwrap()).map(|(a, b)| a - b).collect();
        for i in 0..n {
            for j in 0..no {
                prods[i * no + j].push(e[i] * y[j].conj());
            }
        }
    }
    for z in &prods {
        let mean = z.iter().sum::<c64>() / m as f64;
        let var = z.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!(mean.norm() < 4.0 * se, "{} vs {}", mean.norm(), se);
    }
}

#[test]
fn omp_recovers_three_sparse_atoms() {
    let dict = channel_dictionary(8, 1, 2);
    let pilot = PilotMatrix::new(eye(8), 1.0);
    let omp = OmpGenie::new(dict.clone(), &pilot, 1).unwrap();
    let mut r = stream(4, 0, 0, 0);
    for atoms in [[1usize, 6, 11], [0, 5, 10], [2, 8, 13]] {
        let coef: Vec<c64> = atoms.iter().map(|_| cn01(&mut r) + c64::new(1.0, 0.0)).collect();
        let h: Vec<c64> = (0..8).map(|i| atoms.iter().zip(&coef).map(|(&a, c)| dict[(i, a)] * c).sum()).collect();
        let y = apply_pilot(&h, pilot.p.as_ref(), 1);
        let est = omp.estimate(&y, &h);
        let rel = vec_diff_sq(&est, &h) / h.iter().map(|z| z.norm_sqr()).sum::<f64>();
        assert!(rel < 1e-18, "{rel}");
    }
}

#[test]
fn gmm_beats_least_squares_back_projection() {
    let spec = ExperimentSpec {
        scenario: ScenarioConfig { n_tx: 8, n_rx: 2, n_pilots: 4, seed: 5, ..ScenarioConfig::default() },
        n_train: 4000,
        ..ExperimentSpec::default()
    };
    let data = training_set(&spec).unwrap();
    let model = fit_model(&spec, &data, 4, 2).unwrap();
    let pool = EvalPool::new(&spec.scenario, 1000).unwrap();
    let pilot = dft_pilot_su(8, 4, 1.0).unwrap();
    let nv = noise_var_from_snr(10.0);
    let a = kron(pilot.p.as_ref(), eye(2).as_ref());
    let gram = &a * a.adjoint();
    let params = model.observation_params(&pilot, nv).unwrap();
    let mut r = stream(5, 1, 0, 0);
    let (mut truths, mut gmm, mut ls) = (vec![], vec![], vec![]);
    for u in &pool.users {
        let h = u.sampler.draw(&mut r);
        let y: Vec<c64> = apply_pilot(&h, pilot.p.as_ref(), 2)
            .into_iter()
            .zip(cn_vec(&mut r, 8))
            .map(|(v, w)| v + w * nv.sqrt())
            .collect();
        gmm.push(params.estimate(&y).0);
        let z = solve(gram.as_ref(), Mat::from_fn(8, 1, |i, _| y[i]).as_ref());
        let back = a.adjoint() * z;
        ls.push((0..16).map(|i| back[(i, 0)]).collect::<Vec<_>>());
        truths.push(h);
    }
    let g = evaluate_nmse(&truths, &gmm).unwrap();
    let l = evaluate_nmse(&truths, &ls).unwrap();
    assert!(g < l, "gmm {g} vs ls {l}");
}
