// SPDX-License-Identifier: Apache-2.0

//! Hand-built feature sets with known logit margins, for tests and demos.
//!
//! Two classes sit on the first two axes of a 3-d space. A feature in that
//! plane gets cosine logits whose gap is set exactly by its angle; the third
//! axis is orthogonal to both classes and serves as background.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::io::{self, ClassEmbeddingSet, ManifestDocument, SampleRecord};
use crate::spatial::GridShape;

pub const DIM: usize = 3;
/// Side of the square spatial grid.
pub const GRID_SIDE: usize = 6;
/// Augmented views per sample, not counting the original image in row 0.
pub const AUGMENTED_VIEWS: usize = 8;

pub fn two_class_embeddings() -> ClassEmbeddingSet {
    ClassEmbeddingSet::new(
        DIM,
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        vec!["class_a".into(), "class_b".into()],
    )
    .expect("valid fixture")
}

/// Unit vector whose logit for `favored` exceeds the other class's logit by
/// `margin` at temperature `temperature`.
pub fn feature_with_margin(margin: f64, favored: usize, temperature: f64) -> [f32; DIM] {
    // sin t - cos t = margin * temperature
    let theta = std::f64::consts::FRAC_PI_4 + (margin * temperature / std::f64::consts::SQRT_2).asin();
    let (toward, away) = (theta.sin() as f32, theta.cos() as f32);
    if favored == 1 {
        [away, toward, 0.0]
    } else {
        [toward, away, 0.0]
    }
}

/// Whether grid cell `index` belongs to the centred object block.
pub fn is_object_region(index: usize) -> bool {
    let (x, y) = (index % GRID_SIDE, index / GRID_SIDE);
    (1..5).contains(&x) && (1..5).contains(&y)
}

/// A sample of class `label` whose original image weakly favours the other
/// class (margin 0.1) while every augmented view and every object region
/// favours `label` with margin 1.0. Background regions score 0 for both.
pub fn correction_sample(label: usize, temperature: f64) -> SampleRecord {
    let other = 1 - label;
    let mut views = Vec::with_capacity((AUGMENTED_VIEWS + 1) * DIM);
    views.extend(feature_with_margin(0.1, other, temperature));
    for _ in 0..AUGMENTED_VIEWS {
        views.extend(feature_with_margin(1.0, label, temperature));
    }
    let grid = GridShape::new(GRID_SIDE, GRID_SIDE);
    let object = feature_with_margin(1.0, label, temperature);
    let spatial = (0..grid.len())
        .flat_map(|i| if is_object_region(i) { object } else { [0.0, 0.0, 1.0] })
        .collect();
    SampleRecord::new(AUGMENTED_VIEWS + 1, DIM, grid, views, spatial, Some(label))
        .expect("valid fixture")
}

/// One correction sample per class.
pub fn correction_dataset(temperature: f64) -> (ClassEmbeddingSet, Vec<SampleRecord>) {
    (
        two_class_embeddings(),
        vec![correction_sample(1, temperature), correction_sample(0, temperature)],
    )
}

/// Writes classes, samples and a manifest into `dir`; returns the manifest
/// path.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    classes: &ClassEmbeddingSet,
    samples: &[SampleRecord],
) -> Result<PathBuf> {
    io::write_class_file(classes, dir.join("classes.gsbe"))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, rec) in samples.iter().enumerate() {
        let entry = format!("sample_{i:04}.gsbe");
        io::write_sample_file(rec, dir.join(&entry))?;
        entries.push(entry);
    }
    let manifest = dir.join("manifest.json");
    io::write_manifest(
        &ManifestDocument {
            dataset_name: name.into(),
            class_file: "classes.gsbe".into(),
            samples: entries,
        },
        &manifest,
    )?;
    Ok(manifest)
}
