//! Batch bootstrap for ratio estimators.

use rand::Rng;

/// Bootstrap standard error of `Σ_b num_b / Σ_b den_b`, resampling batches
/// with replacement.
pub fn bootstrap_ratio_se<R: Rng>(num: &[f64], den: &[f64], resamples: usize, rng: &mut R) -> f64 {
    assert_eq!(num.len(), den.len());
    let n = num.len();
    if n < 2 || resamples < 2 {
        return 0.0;
    }
    let mut estimates = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..n {
            let k = rng.random_range(0..n);
            a += num[k];
            b += den[k];
        }
        if b > 0.0 {
            estimates.push(a / b);
        }
    }
    std_dev(&estimates)
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}
