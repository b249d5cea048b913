//! Helpers shared by the integration tests: random models and independent
//! reference solvers.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random positive definite covariance `B Bᵀ + diag(d)` of size m.
pub fn random_covariance(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let d = DMatrix::from_fn(m, m, |i, j| if i == j { rng.random_range(0.1..1.0) } else { 0.0 });
    &b * b.transpose() + d
}

/// Random correlation matrix with off-diagonal magnitudes at most `max_r`,
/// rejected until positive definite.
pub fn random_correlation(rng: &mut ChaCha8Rng, m: usize, max_r: f64) -> DMatrix<f64> {
    loop {
        let mut c = DMatrix::identity(m, m);
        for i in 0..m {
            for j in 0..i {
                let r = rng.random_range(-max_r..max_r);
                c[(i, j)] = r;
                c[(j, i)] = r;
            }
        }
        if c.clone().cholesky().is_some() && c.symmetric_eigenvalues().min() > 1e-3 {
            return c;
        }
    }
}

fn golden_section(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) <= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

fn mode_rate(lambda: f64, d: f64) -> f64 {
    0.5 * (lambda / d).log2().max(0.0)
}

/// Minimizes `Σ ½ log2(λ_i / d_i)⁺` over `0 < d_i ≤ λ_i`, `Σ d_i = budget`
/// directly, by repeated pairwise exchange of distortion between modes with
/// a one-dimensional search per pair. The objective is separable and convex,
/// so a pairwise-stationary allocation is optimal.
pub fn brute_force_rate(lambdas: &[f64], budget: f64) -> f64 {
    let total: f64 = lambdas.iter().sum();
    let mut d: Vec<f64> = lambdas.iter().map(|l| l * budget / total).collect();
    let objective = |d: &[f64]| -> f64 { lambdas.iter().zip(d).map(|(&l, &x)| mode_rate(l, x)).sum() };
    let mut prev = objective(&d);
    for _ in 0..2000 {
        for i in 0..d.len() {
            for j in i + 1..d.len() {
                let s = d[i] + d[j];
                let lo = (s - lambdas[j]).max(s * 1e-15);
                let hi = lambdas[i].min(s);
                if hi <= lo {
                    continue;
                }
                let f = |x: f64| mode_rate(lambdas[i], x) + mode_rate(lambdas[j], s - x);
                let x = golden_section(lo, hi, f);
                d[i] = x;
                d[j] = s - x;
            }
        }
        let now = objective(&d);
        if (prev - now).abs() <= 1e-15 {
            break;
        }
        prev = now;
    }
    objective(&d)
}
