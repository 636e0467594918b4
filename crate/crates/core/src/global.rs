// SPDX-License-Identifier: Apache-2.0

//! Global bias learner.
//!
//! One bias vector is shared by every augmented view. The most confident
//! fraction of views is kept, and the bias is moved down the gradient of
//! the entropy of their averaged, bias-shifted prediction.

use serde::{Deserialize, Serialize};

use crate::bias::{self, BiasVector, TTATrace};
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalConfig {
    /// Step size of the bias update.
    pub alpha: f64,
    /// Fraction of views kept after confidence filtering, in `(0, 1]`.
    pub rho: f64,
    pub steps: usize,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            rho: 0.5,
            steps: 5,
        }
    }
}

impl GlobalConfig {
    pub fn validate(&self) -> Result<()> {
        bias::check_rate("alpha", self.alpha)?;
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Number of views kept out of `view_count` at selection rate `rho`.
pub fn kept_view_count(view_count: usize, rho: f64) -> usize {
    // the small slack absorbs products like 0.3 * 10 landing just under 3
    let k = (rho * view_count as f64 + 1e-9).floor() as usize;
    k.clamp(1, view_count.max(1))
}

/// Indices of the `max(1, floor(rho * N))` views whose softmax has the
/// lowest entropy, returned in ascending index order. Equal entropies are
/// resolved in favour of the lower index.
pub fn select_confident_views(view_logits: &Matrix, rho: f64) -> Result<Vec<usize>> {
    let n = view_logits.rows();
    if n == 0 {
        return Err(Error::EmptyInput("no augmented views"));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "rho must lie in (0, 1], got {rho}"
        )));
    }
    let entropies: Vec<f64> = view_logits
        .iter_rows()
        .map(|row| numerics::entropy(&numerics::softmax(row)))
        .collect();
    Ok(lowest_entropy_indices(&entropies, rho))
}

/// Count-based confidence cutoff over precomputed per-view entropies.
pub fn lowest_entropy_indices(entropies: &[f64], rho: f64) -> Vec<usize> {
    let n = entropies.len();
    if n == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| entropies[a].total_cmp(&entropies[b]).then(a.cmp(&b)));
    let mut kept = order[..kept_view_count(n, rho)].to_vec();
    kept.sort_unstable();
    kept
}

/// Learns the global bias from all view logits (`N x C`).
///
/// Selection happens once on the unbiased logits; the kept set stays fixed
/// for every step.
pub fn learn_global_bias(view_logits: &Matrix, cfg: &GlobalConfig) -> Result<(BiasVector, TTATrace)> {
    cfg.validate()?;
    let kept = select_confident_views(view_logits, cfg.rho)?;
    let confident = view_logits.select_rows(&kept)?;
    bias::descend_entropy(&confident, cfg.alpha, cfg.steps, kept)
}

/// Zero-shot logits shifted by the global bias.
pub fn global_adjusted_logits(zero_shot_logits: &[f64], global_bias: &BiasVector) -> Result<Vec<f64>> {
    add_bias(zero_shot_logits, global_bias)
}

pub(crate) fn add_bias(logits: &[f64], bias: &BiasVector) -> Result<Vec<f64>> {
    if logits.len() != bias.len() {
        return Err(Error::DimensionMismatch {
            context: "bias length vs class count",
            expected: logits.len(),
            found: bias.len(),
        });
    }
    Ok(logits.iter().zip(bias.as_slice()).map(|(z, b)| z + b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rows whose softmax entropy equals each target, for C = 2.
    fn binary_rows_with_entropies(targets: &[f64]) -> Matrix {
        // bisection on the logit gap: entropy falls monotonically as the gap grows
        let rows: Vec<[f64; 2]> = targets
            .iter()
            .map(|&h| {
                let (mut lo, mut hi) = (0.0f64, 50.0f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if numerics::entropy(&numerics::softmax(&[mid, 0.0])) > h {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                [0.5 * (lo + hi), 0.0]
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn keeps_lowest_entropy_half() {
        let z = binary_rows_with_entropies(&[0.1, 0.6, 0.5, 0.2]);
        assert_eq!(select_confident_views(&z, 0.5).unwrap(), vec![0, 3]);
    }

    #[test]
    fn cutoff_on_raw_entropies() {
        assert_eq!(lowest_entropy_indices(&[0.1, 0.9, 0.5, 0.2], 0.5), vec![0, 3]);
        assert!(lowest_entropy_indices(&[], 0.5).is_empty());
    }

    #[test]
    fn rho_one_keeps_everything_and_single_view_survives() {
        let z = binary_rows_with_entropies(&[0.3, 0.1, 0.2]);
        assert_eq!(select_confident_views(&z, 1.0).unwrap(), vec![0, 1, 2]);
        let one = binary_rows_with_entropies(&[0.4]);
        assert_eq!(select_confident_views(&one, 0.01).unwrap(), vec![0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let z = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert_eq!(select_confident_views(&z, 0.5).unwrap(), vec![0, 1]);
    }

    #[test]
    fn selection_errors() {
        assert!(matches!(
            select_confident_views(&Matrix::zeros(0, 3), 0.5),
            Err(Error::EmptyInput(_))
        ));
        let z = Matrix::zeros(2, 2);
        assert!(select_confident_views(&z, 0.0).is_err());
        assert!(select_confident_views(&z, 1.5).is_err());
    }

    #[test]
    fn kept_count_is_floor_clamped() {
        assert_eq!(kept_view_count(8, 0.5), 4);
        assert_eq!(kept_view_count(64, 0.3), 19);
        assert_eq!(kept_view_count(10, 0.3), 3);
        assert_eq!(kept_view_count(3, 0.1), 1);
    }

    #[test]
    fn zero_steps_zero_bias() {
        let z = Matrix::from_rows(&[[0.0, 1.0], [0.2, 0.1]]).unwrap();
        let cfg = GlobalConfig { steps: 0, ..Default::default() };
        let (b, t) = learn_global_bias(&z, &cfg).unwrap();
        assert_eq!(b, BiasVector::zeros(2));
        assert!(t.entropies.is_empty());
    }

    #[test]
    fn uniform_views_never_move_the_bias() {
        let z = Matrix::zeros(6, 4);
        let cfg = GlobalConfig { steps: 10, alpha: 3.0, rho: 0.5 };
        let (b, _) = learn_global_bias(&z, &cfg).unwrap();
        assert_eq!(b, BiasVector::zeros(4));
    }

    #[test]
    fn adjusted_logits() {
        let b = BiasVector::from_vec(vec![0.5, -0.5]);
        assert_eq!(global_adjusted_logits(&[1.0, 2.0], &b).unwrap(), vec![1.5, 1.5]);
        assert_eq!(
            global_adjusted_logits(&[1.0, 2.0], &BiasVector::zeros(2)).unwrap(),
            vec![1.0, 2.0]
        );
        assert!(global_adjusted_logits(&[1.0], &b).is_err());
        let shifted = BiasVector::from_vec(vec![7.5, 6.5]);
        let a = global_adjusted_logits(&[1.0, 2.1], &b).unwrap();
        let c = global_adjusted_logits(&[1.0, 2.1], &shifted).unwrap();
        assert_eq!(numerics::argmax(&a), numerics::argmax(&c));
    }

    #[test]
    fn invalid_config_rejected() {
        let z = Matrix::zeros(2, 2);
        for cfg in [
            GlobalConfig { alpha: -1.0, ..Default::default() },
            GlobalConfig { alpha: f64::NAN, ..Default::default() },
            GlobalConfig { rho: 0.0, ..Default::default() },
        ] {
            assert!(matches!(learn_global_bias(&z, &cfg), Err(Error::InvalidConfig(_))));
        }
    }
}
