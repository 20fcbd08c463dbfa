//! Independent reference computations for the integration tests. Nothing
//! here calls into the crate's numerics except to read a schedule's table.
#![allow(dead_code)]

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

/// `prod_{s <= k} (1 - beta_s)` over a linear ladder of `ladder` betas,
/// sampled every `ladder / steps` rungs.
pub fn alphabar_oracle(beta_start: f64, beta_end: f64, ladder: usize, steps: usize) -> Vec<f64> {
    let betas: Vec<f64> = (0..ladder)
        .map(|i| {
            if ladder == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (ladder - 1) as f64
            }
        })
        .collect();
    let mut prods = vec![1.0];
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        prods.push(acc);
    }
    (0..=steps).map(|t| prods[t * ladder / steps]).collect()
}

pub fn sigma_oracle(abar_prev: f64, abar: f64, eta: f64) -> f64 {
    eta * (((1.0 - abar_prev) / (1.0 - abar)) * (1.0 - abar / abar_prev)).sqrt()
}

/// Kolmogorov-Smirnov distance between `samples` and the CDF `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn normal_cdf(mean: f64, sd: f64) -> impl Fn(f64) -> f64 {
    let d = Normal::new(mean, sd).unwrap();
    move |x| d.cdf(x)
}

/// Exact two-sided sign test over the discordant pairs.
pub fn sign_test_p(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    let b = Binomial::new(0.5, n).unwrap();
    (2.0 * b.cdf(k)).min(1.0)
}

/// Affine law of a stochastic DDIM chain on Gaussian data `N(m, s0sq I)`:
/// starting from `z_t`, the chain ends at `z_0 = a z_t + b + sqrt(v) xi`
/// with `b = beta * m`. Returns `(a, beta, v)` for per-coordinate use.
pub fn gaussian_chain(abar: &[f64], eta: f64, s0sq: f64, t: usize) -> (f64, f64, f64) {
    let (mut a, mut beta, mut v) = (1.0, 0.0, 0.0);
    for tau in (1..=t).rev() {
        let (ab, abp) = (abar[tau], abar[tau - 1]);
        let var_t = ab * s0sq + 1.0 - ab;
        // eps(z) = sqrt(1 - ab) (z - sqrt(ab) m) / var_t
        let ke = (1.0 - ab).sqrt() / var_t;
        let me = -(1.0 - ab).sqrt() * ab.sqrt() / var_t;
        // z0t = (z - sqrt(1 - ab) eps) / sqrt(ab)
        let kz = (1.0 - (1.0 - ab).sqrt() * ke) / ab.sqrt();
        let mz = -(1.0 - ab).sqrt() * me / ab.sqrt();
        let sigma = sigma_oracle(abp, ab, eta);
        let c = (1.0 - abp - sigma * sigma).max(0.0).sqrt();
        let k = abp.sqrt() * kz + c * ke;
        let m = abp.sqrt() * mz + c * me;
        a *= k;
        beta = k * beta + m;
        v = k * k * v + sigma * sigma;
    }
    (a, beta, v)
}

/// `log N(x; mu, var I)` summed over coordinates.
pub fn log_normal_iso(x: &[f64], mu: &[f64], var: f64) -> f64 {
    let d = x.len() as f64;
    let q: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * (d * (2.0 * std::f64::consts::PI * var).ln() + q / var)
}

/// Log density at diffusion time `abar` of a mixture of isotropic Gaussians.
pub fn gmm_log_density(x: &[f64], weights: &[f64], means: &[Vec<f64>], vars: &[f64], abar: f64) -> f64 {
    let terms: Vec<f64> = weights
        .iter()
        .zip(means)
        .zip(vars)
        .map(|((w, m), s)| {
            let mu: Vec<f64> = m.iter().map(|v| abar.sqrt() * v).collect();
            w.ln() + log_normal_iso(x, &mu, abar * s + 1.0 - abar)
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(g, w)| (g - w) * (g - w)).sum::<f64>().sqrt();
    let den: f64 = want.iter().map(|w| w * w).sum::<f64>().sqrt();
    num / den
}
