// SPDX-License-Identifier: Apache-2.0

//! Straightforward re-implementations used as oracles. None of these call
//! into the library's numeric kernels.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Softmax through an explicit log-sum-exp.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::MIN, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| (v - lse).exp()).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.max(1e-12).ln();
        }
    }
    h
}

/// Entropy of the average of per-row softmaxes of `rows[i] + bias`.
pub fn mean_entropy(rows: &[Vec<f64>], bias: &[f64]) -> f64 {
    let c = bias.len();
    let mut avg = vec![0.0; c];
    for r in rows {
        let shifted: Vec<f64> = r.iter().zip(bias).map(|(a, b)| a + b).collect();
        for (acc, p) in avg.iter_mut().zip(softmax(&shifted)) {
            *acc += p / rows.len() as f64;
        }
    }
    entropy(&avg)
}

pub fn mean_distribution(rows: &[Vec<f64>], bias: &[f64]) -> Vec<f64> {
    let mut avg = vec![0.0; bias.len()];
    for r in rows {
        let shifted: Vec<f64> = r.iter().zip(bias).map(|(a, b)| a + b).collect();
        for (acc, p) in avg.iter_mut().zip(softmax(&shifted)) {
            *acc += p;
        }
    }
    avg.iter().map(|v| v / rows.len() as f64).collect()
}

/// Central finite differences of [`mean_entropy`].
pub fn fd_gradient(rows: &[Vec<f64>], bias: &[f64], h: f64) -> Vec<f64> {
    (0..bias.len())
        .map(|c| {
            let mut up = bias.to_vec();
            let mut down = bias.to_vec();
            up[c] += h;
            down[c] -= h;
            (mean_entropy(rows, &up) - mean_entropy(rows, &down)) / (2.0 * h)
        })
        .collect()
}

/// Infinity-norm relative error with a 1e-8 floor on the scale.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Lowest-entropy selection by full sort of `(entropy, index)` pairs.
pub fn select_by_sort(rows: &[Vec<f64>], rho: f64) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (entropy(&softmax(r)), i))
        .collect();
    keyed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut count = (rho * rows.len() as f64 + 1e-9).floor() as usize;
    count = count.max(1).min(rows.len());
    let mut out: Vec<usize> = keyed[..count].iter().map(|&(_, i)| i).collect();
    out.sort();
    out
}

/// Top-K by repeatedly extracting the first maximum.
pub fn topk_by_extraction(values: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; values.len()];
    let mut out = Vec::new();
    for _ in 0..k.min(values.len()) {
        let mut best: Option<usize> = None;
        for i in 0..values.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| values[i] > values[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out.sort();
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Per-class softmax over positions, then averaged over classes.
pub fn relevance_map(regions: &[Vec<f64>], classes: &[Vec<f64>], temperature: f64) -> Vec<f64> {
    let mut m = vec![0.0; regions.len()];
    for t in classes {
        let scores: Vec<f64> = regions.iter().map(|r| cosine(r, t) / temperature).collect();
        for (acc, p) in m.iter_mut().zip(softmax(&scores)) {
            *acc += p / classes.len() as f64;
        }
    }
    m
}

/// Seeded generator for random instances.
pub struct Gen(ChaCha8Rng);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.random_range(lo..hi)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        self.0.random_range(lo..=hi)
    }

    pub fn rows(&mut self, n: usize, c: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..c).map(|_| self.uniform(lo, hi)).collect()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.0);
    }
}
