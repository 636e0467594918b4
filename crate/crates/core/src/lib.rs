// SPDX-License-Identifier: Apache-2.0

//! Test-time adaptation of zero-shot vision-language predictions through two
//! learned logit biases.
//!
//! Given class text embeddings and, per test image, a set of augmented-view
//! embeddings plus a patch-level feature grid, the crate learns
//!
//! * a **global bias** by minimizing the entropy of the averaged prediction
//!   over the most confident augmented views ([`global`]), and
//! * a **spatial bias** by minimizing the entropy of the averaged prediction
//!   over the Top-K most class-relevant patches ([`spatial`]),
//!
//! and adds both to the zero-shot logits of the original image
//! ([`pipeline`]). All gradients are closed form ([`numerics`]); no encoder
//! is run and nothing is back-propagated through a network.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias;
pub mod error;
pub mod fixtures;
pub mod global;
pub mod gradcheck;
pub mod io;
pub mod numerics;
pub mod pipeline;
pub mod spatial;

pub use bias::{BiasVector, TTATrace};
pub use error::{Error, Result};
pub use global::GlobalConfig;
pub use io::{ClassEmbeddingSet, DatasetManifest, SampleRecord};
pub use numerics::Matrix;
pub use pipeline::{Mode, Preset, SampleResult, TTAConfig};
pub use spatial::{GridShape, SpatialConfig, SpatialMap};
