// SPDX-License-Identifier: Apache-2.0

//! Spatial bias learner.
//!
//! Each patch of the spatial grid is scored against the classes. A
//! class-relevance map over the grid picks the Top-K regions, and a shared
//! bias is fitted by entropy descent over their averaged prediction.

use serde::{Deserialize, Serialize};

use crate::bias::{self, BiasVector, TTATrace};
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

/// Default number of selected regions.
pub const DEFAULT_TOPK: usize = 16;

/// Default cut for [`significant_region_count`].
pub const SIGNIFICANCE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialConfig {
    /// Step size of the bias update.
    pub beta: f64,
    pub topk: usize,
    pub steps: usize,
    /// Temperature of the per-class softmax over grid positions.
    pub map_temperature: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            topk: DEFAULT_TOPK,
            steps: 5,
            map_temperature: 1.0,
        }
    }
}

impl SpatialConfig {
    pub fn validate(&self) -> Result<()> {
        bias::check_rate("beta", self.beta)?;
        if self.topk == 0 {
            return Err(Error::InvalidConfig("topk must be at least 1".into()));
        }
        if !(self.map_temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(self.map_temperature));
        }
        Ok(())
    }
}

/// Grid dimensions; position `(x, y)` lives at row `y * width + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub width: usize,
    pub height: usize,
}

impl GridShape {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Distribution over grid positions saying how strongly each region relates
/// to the class set as a whole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMap {
    pub shape: GridShape,
    pub values: Vec<f64>,
}

/// Per-region class logits, `(w*h) x C`. Identical to zero-shot scoring,
/// applied to every patch.
pub fn spatial_logits(spatial: &Matrix, classes: &Matrix, temperature: f64) -> Result<Matrix> {
    numerics::cosine_logits(spatial, classes, temperature)
}

/// For every class, softmax over positions of the cosine score divided by
/// `map_temperature`; the map is the mean of those C distributions.
pub fn category_aware_map(
    spatial: &Matrix,
    shape: GridShape,
    classes: &Matrix,
    map_temperature: f64,
) -> Result<SpatialMap> {
    if spatial.rows() != shape.len() {
        return Err(Error::DimensionMismatch {
            context: "spatial rows vs grid size",
            expected: shape.len(),
            found: spatial.rows(),
        });
    }
    if classes.rows() == 0 {
        return Err(Error::EmptyInput("no classes"));
    }
    let scores = numerics::cosine_logits(spatial, classes, map_temperature)?;
    let positions = shape.len();
    let mut values = vec![0.0; positions];
    let mut column = vec![0.0; positions];
    for c in 0..classes.rows() {
        for (i, slot) in column.iter_mut().enumerate() {
            *slot = scores.row(i)[c];
        }
        numerics::softmax_in_place(&mut column);
        values.iter_mut().zip(&column).for_each(|(m, s)| *m += s);
    }
    let class_count = classes.rows() as f64;
    values.iter_mut().for_each(|m| *m /= class_count);
    Ok(SpatialMap { shape, values })
}

/// Indices of the `min(k, w*h)` largest map entries, ascending by index.
/// Equal values are resolved in favour of the lower index.
pub fn topk_regions(map: &SpatialMap, k: usize) -> Vec<usize> {
    let values = &map.values;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k.min(values.len()));
    order.sort_unstable();
    order
}

/// Learns the spatial bias from the selected rows of `region_logits`.
pub fn learn_spatial_bias(
    region_logits: &Matrix,
    selected: &[usize],
    cfg: &SpatialConfig,
) -> Result<(BiasVector, TTATrace)> {
    cfg.validate()?;
    if selected.is_empty() || selected.iter().any(|&i| i >= region_logits.rows()) {
        return Err(Error::EmptySelection);
    }
    let rows = region_logits.select_rows(selected)?;
    bias::descend_entropy(&rows, cfg.beta, cfg.steps, selected.to_vec())
}

/// Number of regions whose min-max normalised map value is strictly above
/// `threshold`. A flat map has no significant region.
pub fn significant_region_count(map: &[f64], threshold: f64) -> usize {
    let (min, max) = map
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    if !(range > 0.0) {
        return 0;
    }
    map.iter().filter(|&&v| (v - min) / range > threshold).count()
}
