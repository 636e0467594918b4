// SPDX-License-Identifier: Apache-2.0

//! Small dense kernels shared by both bias learners.
//!
//! Everything here works in `f64`. Stored features are `f32` and get widened
//! on the way in; the entropy gradient is checked against finite differences
//! at tolerances that single precision cannot meet.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied inside `ln` so that underflowed probabilities stay finite.
pub const LOG_CLAMP: f64 = 1e-12;

/// Rows with a Euclidean norm below this are rejected by [`l2_normalize_rows`].
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix buffer",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix row",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Widens a single-precision row-major buffer.
    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty buffer with cols == 0 would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Copies the listed rows, in the listed order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::DimensionMismatch {
                    context: "row index",
                    expected: self.rows,
                    found: i,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let norm = l2_norm(row);
        if !(norm >= MIN_ROW_NORM) {
            return Err(Error::ZeroRowNorm { row: i });
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// Cosine similarity of every feature row against every class row, divided
/// by `temperature`. Output is `features.rows() x classes.rows()`.
pub fn cosine_logits(features: &Matrix, classes: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    if features.cols != classes.cols {
        return Err(Error::DimensionMismatch {
            context: "feature width vs class embedding width",
            expected: classes.cols,
            found: features.cols,
        });
    }
    let f = l2_normalize_rows(features)?;
    let t = l2_normalize_rows(classes)?;
    cosine_logits_normalized(&f, &t, temperature)
}

/// Same as [`cosine_logits`] for rows that are already unit length.
pub(crate) fn cosine_logits_normalized(
    features: &Matrix,
    classes: &Matrix,
    temperature: f64,
) -> Result<Matrix> {
    let mut out = Matrix::zeros(features.rows, classes.rows);
    for (i, f) in features.iter_rows().enumerate() {
        let row = out.row_mut(i);
        for (c, t) in classes.iter_rows().enumerate() {
            row[c] = dot(f, t) / temperature;
        }
    }
    Ok(out)
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Shannon entropy in nats, with `ln` clamped at [`LOG_CLAMP`].
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&pc| pc * pc.max(LOG_CLAMP).ln()).sum::<f64>()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax of each bias-shifted row.
fn shifted_softmax_rows(logits: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if logits.rows == 0 {
        return Err(Error::EmptyInput("logit matrix has no rows"));
    }
    if bias.len() != logits.cols {
        return Err(Error::DimensionMismatch {
            context: "bias length vs class count",
            expected: logits.cols,
            found: bias.len(),
        });
    }
    let mut q = logits.clone();
    for i in 0..q.rows {
        let row = q.row_mut(i);
        row.iter_mut().zip(bias).for_each(|(z, b)| *z += b);
        softmax_in_place(row);
    }
    Ok(q)
}

fn column_mean(m: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; m.cols];
    for row in m.iter_rows() {
        mean.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
    }
    let n = m.rows as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    mean
}

/// Mean of `softmax(row + bias)` over all rows, and its entropy.
pub fn mean_softmax_entropy(logits: &Matrix, bias: &[f64]) -> Result<(Vec<f64>, f64)> {
    let q = shifted_softmax_rows(logits, bias)?;
    let mean = column_mean(&q);
    let h = entropy(&mean);
    Ok((mean, h))
}

/// Gradient of [`mean_softmax_entropy`]'s entropy with respect to `bias`.
pub fn mean_softmax_entropy_gradient(logits: &Matrix, bias: &[f64]) -> Result<Vec<f64>> {
    mean_softmax_entropy_with_gradient(logits, bias).map(|(_, _, g)| g)
}

/// Mean distribution, entropy and bias gradient from one softmax pass.
///
/// With `q_i = softmax(Z_i + b)`, `p = mean_i q_i` and
/// `g_c = -(ln p_c + 1)`, the gradient is
/// `(1/m) sum_i [q_i * g - (q_i . g) q_i]`.
pub fn mean_softmax_entropy_with_gradient(
    logits: &Matrix,
    bias: &[f64],
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let q = shifted_softmax_rows(logits, bias)?;
    let mean = column_mean(&q);
    let h = entropy(&mean);
    let mut g: Vec<f64> = mean.iter().map(|&p| -(p.max(LOG_CLAMP).ln() + 1.0)).collect();
    // The softmax Jacobian annihilates constants, so shifting g changes
    // nothing analytically; anchoring at its minimum makes a constant g
    // produce an exactly zero gradient.
    let floor = g.iter().copied().fold(f64::INFINITY, f64::min);
    g.iter_mut().for_each(|v| *v -= floor);

    let mut grad = vec![0.0; logits.cols];
    for qi in q.iter_rows() {
        let qg = dot(qi, &g);
        for ((acc, &qc), &gc) in grad.iter_mut().zip(qi).zip(&g) {
            *acc += qc * (gc - qg);
        }
    }
    let m = logits.rows as f64;
    grad.iter_mut().for_each(|v| *v /= m);
    Ok((mean, h, grad))
}
