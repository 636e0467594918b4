// SPDX-License-Identifier: Apache-2.0

//! Additive logit bias and the shared entropy-descent loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

/// Length-C offset added to class logits. Starts at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BiasVector(Vec<f64>);

impl BiasVector {
    pub fn zeros(class_count: usize) -> Self {
        Self(vec![0.0; class_count])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l2_norm(&self) -> f64 {
        numerics::l2_norm(&self.0)
    }

    /// `self -= step * grad`
    fn descend(&mut self, step: f64, grad: &[f64]) {
        self.0.iter_mut().zip(grad).for_each(|(b, g)| *b -= step * g);
    }
}

/// Per-step diagnostics of one bias learner run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TTATrace {
    /// Entropy of the mean distribution before the first update.
    pub initial_entropy: f64,
    /// Entropy after each update; one entry per step.
    pub entropies: Vec<f64>,
    /// Bias L2 norm after each update.
    pub bias_norms: Vec<f64>,
    /// Rows (views or regions) that took part in the objective.
    pub kept: Vec<usize>,
}

/// Plain gradient descent of the mean-softmax entropy over `logits` with
/// respect to a shared additive bias.
pub(crate) fn descend_entropy(
    logits: &Matrix,
    learning_rate: f64,
    steps: usize,
    kept: Vec<usize>,
) -> Result<(BiasVector, TTATrace)> {
    if logits.rows() == 0 {
        return Err(Error::EmptyInput("no rows to adapt on"));
    }
    let mut bias = BiasVector::zeros(logits.cols());
    let mut trace = TTATrace {
        kept,
        entropies: Vec::with_capacity(steps),
        bias_norms: Vec::with_capacity(steps),
        ..TTATrace::default()
    };
    if steps == 0 {
        trace.initial_entropy = numerics::mean_softmax_entropy(logits, bias.as_slice())?.1;
        return Ok((bias, trace));
    }

    let (_, h0, mut grad) = numerics::mean_softmax_entropy_with_gradient(logits, bias.as_slice())?;
    trace.initial_entropy = h0;
    for step in 0..steps {
        bias.descend(learning_rate, &grad);
        trace.bias_norms.push(bias.l2_norm());
        if step + 1 == steps {
            let (_, h) = numerics::mean_softmax_entropy(logits, bias.as_slice())?;
            trace.entropies.push(h);
        } else {
            let (_, h, g) = numerics::mean_softmax_entropy_with_gradient(logits, bias.as_slice())?;
            trace.entropies.push(h);
            grad = g;
        }
    }
    Ok((bias, trace))
}

pub(crate) fn check_rate(name: &str, value: f64) -> Result<()> {
    // zero is accepted so that a learner can be switched off in place
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must be a finite non-negative number, got {value}"
        )))
    }
}
