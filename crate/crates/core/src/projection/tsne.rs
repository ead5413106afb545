//! Exact t-SNE.
//!
//! Input affinities come from a per-point binary search on the Gaussian
//! bandwidth matching the target perplexity. Optimisation is plain gradient
//! descent with momentum and per-coordinate gains; P is exaggerated for the
//! first `exaggeration_iters` iterations.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneOutput {
    pub coords: Vec<[f64; 2]>,
    pub perplexity: f64,
    /// KL divergence right after early exaggeration ends.
    pub kl_after_exaggeration: f64,
    pub kl_final: f64,
}

/// Perplexity actually used for `n` points.
pub fn effective_perplexity(requested: f64, n: usize) -> f64 {
    let cap = ((n.saturating_sub(1)) / 3).max(1) as f64;
    requested.min(cap).max(1.0)
}

pub fn tsne(vectors: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneOutput> {
    let n = vectors.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("t-SNE needs at least 3 points, got {n}")));
    }
    if !(cfg.perplexity > 0.0 && cfg.learning_rate > 0.0 && cfg.exaggeration >= 1.0) {
        return Err(Error::InvalidConfig(format!("invalid t-SNE config {cfg:?}")));
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: v.len(),
        });
    }
    let perplexity = effective_perplexity(cfg.perplexity, n);
    let p = joint_probabilities(vectors, perplexity);

    let mut rng = crate::seeded_rng(cfg.seed);
    let init = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_after_exaggeration = None;
    for it in 0..cfg.iterations {
        let exaggerating = it < cfg.exaggeration_iters;
        let exag = if exaggerating { cfg.exaggeration } else { 1.0 };
        let momentum = if exaggerating { 0.5 } else { 0.8 };
        let (grad, _) = gradient(&p, &y, exag);
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                update[i][d] = momentum * update[i][d] - cfg.learning_rate * gains[i][d] * g;
                y[i][d] += update[i][d];
            }
        }
        let mean = [0, 1].map(|d| y.iter().map(|p| p[d]).sum::<f64>() / n as f64);
        for p in &mut y {
            p[0] -= mean[0];
            p[1] -= mean[1];
        }
        if it + 1 == cfg.exaggeration_iters {
            kl_after_exaggeration = Some(kl_divergence(&p, &y));
        }
    }
    let kl_final = kl_divergence(&p, &y);
    Ok(TsneOutput {
        coords: y,
        perplexity,
        kl_after_exaggeration: kl_after_exaggeration.unwrap_or(kl_final),
        kl_final,
    })
}

/// Symmetrised input affinities, row-major `n x n`.
fn joint_probabilities(x: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = x.len();
    let target = perplexity.ln();
    let cond: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d: Vec<f64> = (0..n)
                .map(|j| x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            conditional_row(&d, i, target)
        })
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    p
}

/// `P(j | i)` with the bandwidth found by bisection on the entropy.
fn conditional_row(d: &[f64], i: usize, target_entropy: f64) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut beta = 1.0;
    let min_d = d
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let mut row = vec![0.0; d.len()];
    for _ in 0..200 {
        let mut sum = 0.0;
        for (j, v) in d.iter().enumerate() {
            // shifting by the nearest distance keeps exp() away from underflow
            row[j] = if j == i { 0.0 } else { (-(v - min_d) * beta).exp() };
            sum += row[j];
        }
        let mut h = 0.0;
        for (j, r) in row.iter_mut().enumerate() {
            *r /= sum;
            if j != i && *r > 0.0 {
                h -= *r * r.ln();
            }
        }
        let diff = h - target_entropy;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
    row
}

/// Gradient of KL(P || Q) with P scaled by `exag`, and the normaliser of Q.
fn gradient(p: &[f64], y: &[[f64; 2]], exag: f64) -> (Vec<[f64; 2]>, f64) {
    let n = y.len();
    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| j != i).map(|j| student(y[i], y[j])).sum())
        .collect();
    let z: f64 = row_sums.iter().sum();
    let grad = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let num = student(y[i], y[j]);
                let coeff = 4.0 * (exag * p[i * n + j] - num / z) * num;
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            g
        })
        .collect();
    (grad, z)
}

fn student(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

/// KL(P || Q) for embedding `y`.
pub(crate) fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| j != i).map(|j| student(y[i], y[j])).sum())
        .collect();
    let z: f64 = row_sums.iter().sum();
    let terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let pij = p[i * n + j];
                    let q = (student(y[i], y[j]) / z).max(1e-300);
                    pij * (pij / q).ln()
                })
                .sum()
        })
        .collect();
    terms.iter().sum()
}
