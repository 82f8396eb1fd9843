//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

pub fn gaussian_matrix(r: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| gauss(r))
}

pub fn gaussian_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gauss(r))
}

pub fn mask_indices(m: usize, mask: u64) -> Vec<usize> {
    (0..m).filter(|j| mask >> j & 1 == 1).collect()
}

/// Minimum-norm least squares `X_p^+ Y`, scattered into `R^M`, plus the
/// rank of `X_p`, from the eigendecomposition of `X_pᵀ X_p`.
pub fn min_norm_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    idx: &[usize],
) -> (DVector<f64>, usize) {
    let m = x.ncols();
    let mut theta = DVector::zeros(m);
    if idx.is_empty() {
        return (theta, 0);
    }
    let xp = x.select_columns(idx);
    let eig = (xp.transpose() * &xp).symmetric_eigen();
    let top = eig.eigenvalues.max();
    let rhs = xp.transpose() * y;
    let mut sol = DVector::zeros(idx.len());
    let mut rank = 0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 1e-12 * top {
            let v = eig.eigenvectors.column(k);
            sol += v * (v.dot(&rhs) / lam);
            rank += 1;
        }
    }
    for (k, &j) in idx.iter().enumerate() {
        theta[j] = sol[k];
    }
    (theta, rank)
}

/// Mallows-Cp risk `|Y − X θ_p|²/n + 2σ² rank/n − σ²`.
pub fn cp(x: &DMatrix<f64>, y: &DVector<f64>, idx: &[usize], sigma: f64) -> (f64, DVector<f64>) {
    let n = y.len() as f64;
    let (theta, rank) = min_norm_least_squares(x, y, idx);
    let rss = (y - x * &theta).norm_squared() / n;
    let s2 = sigma * sigma;
    (rss + 2.0 * s2 * rank as f64 / n - s2, theta)
}

/// `[C(L,s) e^s H_L]^{-1}` by direct products.
pub fn sparsity_prior(len: usize, s: usize) -> f64 {
    let binom = (0..s).fold(1.0, |acc, k| acc * (len - k) as f64 / (k + 1) as f64);
    let h: f64 = (0..=len).map(|k| (-(k as f64)).exp()).sum();
    1.0 / (binom * (s as f64).exp() * h)
}

/// Brute-force exponentially weighted average of the per-pattern vectors.
pub fn weighted_average(logits: &[f64], thetas: &[DVector<f64>]) -> (Vec<f64>, DVector<f64>) {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|v| v / z).collect();
    let mut avg = DVector::zeros(thetas[0].len());
    for (wj, t) in w.iter().zip(thetas) {
        avg += *wj * t;
    }
    (w, avg)
}
