//! Small numeric helpers shared across the model: log-densities, quantiles,
//! and standard-error estimates for MCMC output.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-13 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection keeps the approximation accurate near zero.
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * LN_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Log-density of InverseGamma(shape, rate): x^(-shape-1) exp(-rate/x) rate^shape / Gamma(shape).
pub fn ln_inv_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

pub fn ln_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    let ln_b = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_b
}

pub fn draw_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("valid normal parameters").sample(rng)
}

/// Draw from InverseGamma(shape, rate) via its Gamma reciprocal.
pub fn draw_inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng);
    rate / g
}

pub fn draw_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("valid beta parameters").sample(rng)
}

/// Sample an index proportional to `exp(log_weights)`, stable under shifting.
pub fn sample_from_log_weights<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> usize {
    debug_assert!(!log_weights.is_empty());
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|&w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Standard error of the mean of an iid sample.
pub fn iid_se(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Batch-means standard error of the mean for an autocorrelated chain.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let n_batches = (n as f64).sqrt().floor() as usize;
    if n_batches < 2 {
        return iid_se(xs);
    }
    let batch_len = n / n_batches;
    let used = n_batches * batch_len;
    let grand = mean(&xs[..used]);
    let mut acc = 0.0;
    for b in 0..n_batches {
        let bm = mean(&xs[b * batch_len..(b + 1) * batch_len]);
        acc += (bm - grand) * (bm - grand);
    }
    let var_of_mean = batch_len as f64 * acc / (n_batches as f64 - 1.0) / used as f64;
    var_of_mean.sqrt()
}

/// Gelman-Rubin potential scale reduction factor over parallel chains.
///
/// Returns `None` when fewer than two chains (or too-short chains) are given.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let n = chains.iter().map(Vec::len).min()?;
    if n < 2 {
        return None;
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let grand = mean(&chain_means);
    let b = nf / (m - 1.0)
        * chain_means.iter().map(|&cm| (cm - grand) * (cm - grand)).sum::<f64>();
    let w = chains.iter().map(|c| sample_variance(&c[..n])).sum::<f64>() / m;
    if w <= 0.0 {
        return Some(1.0);
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Some((var_plus / w).sqrt())
}
