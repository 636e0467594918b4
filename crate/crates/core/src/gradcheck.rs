// SPDX-License-Identifier: Apache-2.0

//! Finite-difference check of the closed-form entropy gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub trials: usize,
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    pub max_rows: usize,
    pub max_classes: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            step: 1e-4,
            tolerance: 1e-4,
            max_rows: 16,
            max_classes: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_rel_error: f64,
    pub worst_trial: usize,
    pub worst_shape: (usize, usize),
    pub passed: bool,
}

/// A random `(logits, bias)` pair: `m` in `1..=max_rows`, `C` in
/// `2..=max_classes`, logits in `[-4, 4)`, bias in `[-1, 1)`.
pub fn random_instance(rng: &mut impl Rng, max_rows: usize, max_classes: usize) -> (Matrix, Vec<f64>) {
    let m = rng.random_range(1..=max_rows.max(1));
    let c = rng.random_range(2..=max_classes.max(2));
    let data = (0..m * c).map(|_| rng.random_range(-4.0..4.0)).collect();
    let bias = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
    (Matrix::new(m, c, data).expect("sized"), bias)
}

/// Central differences of the mean-softmax entropy with respect to the bias.
pub fn numeric_gradient(logits: &Matrix, bias: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = bias.to_vec();
    let mut out = Vec::with_capacity(bias.len());
    for c in 0..bias.len() {
        probe[c] = bias[c] + step;
        let up = numerics::mean_softmax_entropy(logits, &probe)?.1;
        probe[c] = bias[c] - step;
        let down = numerics::mean_softmax_entropy(logits, &probe)?.1;
        probe[c] = bias[c];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// `max|a - n| / max(max|a|, max|n|)`, with the denominator floored at 1e-8
/// so that an all-zero gradient compares on an absolute scale.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / inf(analytic).max(inf(numeric)).max(1e-8)
}

pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    run_gradcheck_with(cfg, numerics::mean_softmax_entropy_gradient)
}

/// Runs the check against an arbitrary gradient kernel.
pub fn run_gradcheck_with<K>(cfg: &GradCheckConfig, kernel: K) -> Result<GradCheckReport>
where
    K: Fn(&Matrix, &[f64]) -> Result<Vec<f64>>,
{
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig("at least one trial is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        trials: cfg.trials,
        max_rel_error: 0.0,
        worst_trial: 0,
        worst_shape: (0, 0),
        passed: false,
    };
    for trial in 0..cfg.trials {
        let (logits, bias) = random_instance(&mut rng, cfg.max_rows, cfg.max_classes);
        let analytic = kernel(&logits, &bias)?;
        let numeric = numeric_gradient(&logits, &bias, cfg.step)?;
        let err = relative_error(&analytic, &numeric);
        // NaN must register as a failure
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_trial = trial;
            report.worst_shape = (logits.rows(), logits.cols());
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}
