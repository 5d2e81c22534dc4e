//! NMSE and bootstrap summaries.

use rand::Rng;

use crate::c64;
use crate::error::{invalid, Result, dim};
use crate::rng::{stream, tag};

/// `(1 / (N M)) Σ ‖h − ĥ‖²` with `N` the channel dimension.
pub fn evaluate_nmse(truths: &[Vec<c64>], estimates: &[Vec<c64>]) -> Result<f64> {
    if truths.is_empty() {
        return Err(invalid("no samples"));
    }
    if truths.len() != estimates.len() {
        return Err(dim("truths and estimates differ in count"));
    }
    let n = truths[0].len();
    let mut acc = 0.0;
    for (h, e) in truths.iter().zip(estimates) {
        if h.len() != n || e.len() != n {
            return Err(dim("samples differ in length"));
        }
        acc += h.iter().zip(e).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
    }
    Ok(acc / (n * truths.len()) as f64)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn resampled_means(x: &[&[f64]], resamples: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = x[0].len();
    let mut r = stream(seed, tag::BOOTSTRAP, 0, 0);
    let mut idx = vec![0usize; n];
    (0..resamples)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = r.random_range(0..n));
            x.iter().map(|s| idx.iter().map(|&i| s[i]).sum::<f64>() / n as f64).collect()
        })
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile 95% interval for the mean.
pub fn bootstrap_ci(x: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    if x.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut m: Vec<f64> = resampled_means(&[x], resamples, seed).into_iter().map(|v| v[0]).collect();
    m.sort_by(f64::total_cmp);
    (percentile(&m, 0.025), percentile(&m, 0.975))
}

/// Fraction of paired resamples in which `mean(a) < mean(b)`, or
/// `mean(a) <= mean(b)` when `strict` is false.
pub fn paired_confidence(a: &[f64], b: &[f64], resamples: usize, seed: u64, strict: bool) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples");
    if a.is_empty() || resamples == 0 {
        return f64::NAN;
    }
    let hits = resampled_means(&[a, b], resamples, seed)
        .into_iter()
        .filter(|m| if strict { m[0] < m[1] } else { m[0] <= m[1] })
        .count();
    hits as f64 / resamples as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_hand_cases() {
        let t = vec![vec![c64::new(1.0, 0.0), c64::new(0.0, 1.0)], vec![c64::new(2.0, 0.0), c64::new(0.0, 0.0)]];
        assert_eq!(evaluate_nmse(&t, &t).unwrap(), 0.0);
        let e = vec![vec![c64::new(0.0, 0.0), c64::new(0.0, 1.0)], vec![c64::new(2.0, 1.0), c64::new(1.0, 0.0)]];
        // (1 + 0) + (1 + 1) over N = 2, M = 2
        assert!((evaluate_nmse(&t, &e).unwrap() - 0.75).abs() < 1e-15);
        assert!(evaluate_nmse(&[], &[]).is_err());
        assert!(evaluate_nmse(&t, &e[..1]).is_err());
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let x: Vec<f64> = (0..200).map(|i| (i % 17) as f64).collect();
        let (lo, hi) = bootstrap_ci(&x, 1000, 3);
        let m = mean(&x);
        assert!(lo < m && m < hi);
        assert_eq!(bootstrap_ci(&x, 1000, 3), (lo, hi));
    }

    #[test]
    fn paired_confidence_extremes() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert_eq!(paired_confidence(&a, &b, 200, 1, true), 1.0);
        assert_eq!(paired_confidence(&b, &a, 200, 1, true), 0.0);
        assert_eq!(paired_confidence(&a, &a, 200, 1, false), 1.0);
    }
}
