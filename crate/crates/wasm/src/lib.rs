// SPDX-License-Identifier: Apache-2.0

//! Browser bindings for a synthetic-scene playground.
//!
//! A scene is a square patch grid with one object of a chosen class on a
//! background, a set of augmented views, and an unaugmented view whose
//! features can be pulled towards a distractor class. Every export takes and
//! returns JSON strings so the page needs no generated typings.

use gs_bias::gradcheck::{self, GradCheckConfig};
use gs_bias::io::{ClassEmbeddingSet, SampleRecord};
use gs_bias::numerics;
use gs_bias::pipeline::{Adaptation, Mode, TTAConfig};
use gs_bias::spatial::{self, GridShape};
use gs_bias::{GlobalConfig, SpatialConfig, TTATrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub seed: u64,
    pub classes: usize,
    pub side: usize,
    pub object_class: usize,
    pub object_x: f64,
    pub object_y: f64,
    pub object_radius: f64,
    /// Class evidence of views and object patches, in logit units.
    pub signal: f64,
    /// Amplitude of the uniform feature noise, in logit units.
    pub noise: f64,
    /// How far the unaugmented view leans towards the distractor, 0 to 1.
    pub confusion: f64,
    pub views: usize,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub topk: usize,
    pub steps: usize,
    pub tau: f64,
    pub map_temperature: f64,
    pub threshold: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            seed: 7,
            classes: 5,
            side: 10,
            object_class: 0,
            object_x: 0.5,
            object_y: 0.5,
            object_radius: 0.25,
            signal: 2.0,
            noise: 0.5,
            confusion: 0.6,
            views: 8,
            alpha: 1.0,
            beta: 1.0,
            rho: 0.5,
            topk: spatial::DEFAULT_TOPK,
            steps: 5,
            tau: 0.01,
            map_temperature: 1.0,
            threshold: spatial::SIGNIFICANCE_THRESHOLD,
        }
    }
}

impl SceneParams {
    fn config(&self) -> TTAConfig {
        TTAConfig {
            global: GlobalConfig { alpha: self.alpha, rho: self.rho, steps: self.steps },
            spatial: SpatialConfig {
                beta: self.beta,
                topk: self.topk,
                steps: self.steps,
                map_temperature: self.map_temperature,
            },
            temperature: self.tau,
            mode: Mode::Both,
        }
    }

    fn check(&self) -> Result<(), String> {
        if !(2..=26).contains(&self.classes) {
            return Err("classes must be between 2 and 26".into());
        }
        if !(2..=32).contains(&self.side) {
            return Err("side must be between 2 and 32".into());
        }
        if self.object_class >= self.classes {
            return Err("object class out of range".into());
        }
        if !(1..=128).contains(&self.views) {
            return Err("views must be between 1 and 128".into());
        }
        self.config().validate().map_err(|e| e.to_string())
    }
}

pub struct Scene {
    pub classes: ClassEmbeddingSet,
    pub sample: SampleRecord,
    pub object_mask: Vec<bool>,
    pub distractor: usize,
}

/// Feature on the class basis: a unit background axis plus per-class
/// components scaled so that a component of `v` moves that class logit by
/// roughly `v`.
struct Painter<'a> {
    rng: ChaCha8Rng,
    p: &'a SceneParams,
}

impl Painter<'_> {
    fn feature(&mut self, evidence: &[(usize, f64)]) -> Vec<f32> {
        let c = self.p.classes;
        let mut f = vec![0.0f64; c + 1];
        f[c] = 1.0;
        for x in f.iter_mut().take(c) {
            *x = self.p.noise * self.p.tau * self.rng.random_range(-1.0..1.0);
        }
        for &(class, amount) in evidence {
            f[class] += amount * self.p.tau;
        }
        f.into_iter().map(|x| x as f32).collect()
    }
}

/// Builds a labelled scene. Noise comes from one seeded stream, so equal
/// parameters give equal scenes.
pub fn build_scene(p: &SceneParams) -> Result<Scene, String> {
    p.check()?;
    let dim = p.classes + 1;
    let target = p.object_class;
    let distractor = (target + 1) % p.classes;
    let mut painter = Painter { rng: ChaCha8Rng::seed_from_u64(p.seed), p };

    let mut views = painter.feature(&[
        (target, (1.0 - p.confusion) * p.signal),
        (distractor, p.confusion * p.signal),
    ]);
    for _ in 1..p.views {
        views.extend(painter.feature(&[(target, p.signal)]));
    }

    let shape = GridShape::new(p.side, p.side);
    let mut spatial = Vec::with_capacity(shape.len() * dim);
    let mut object_mask = Vec::with_capacity(shape.len());
    for y in 0..p.side {
        for x in 0..p.side {
            let cx = (x as f64 + 0.5) / p.side as f64 - p.object_x;
            let cy = (y as f64 + 0.5) / p.side as f64 - p.object_y;
            let inside = cx.hypot(cy) <= p.object_radius;
            let evidence = if inside { p.signal } else { 0.0 };
            spatial.extend(painter.feature(&[(target, evidence)]));
            object_mask.push(inside);
        }
    }

    let mut basis = vec![0.0f32; p.classes * dim];
    for c in 0..p.classes {
        basis[c * dim + c] = 1.0;
    }
    let names = (0..p.classes).map(|i| char::from(b'A' + i as u8).to_string()).collect();
    let classes = ClassEmbeddingSet::new(dim, basis, names).map_err(|e| e.to_string())?;
    let sample = SampleRecord::new(p.views, dim, shape, views, spatial, Some(target))
        .map_err(|e| e.to_string())?;
    Ok(Scene { classes, sample, object_mask, distractor })
}

#[derive(Serialize)]
struct MapView {
    side: usize,
    values: Vec<f64>,
    object_mask: Vec<bool>,
    /// Most relevant first.
    topk: Vec<usize>,
    significant_regions: usize,
    object_regions: usize,
}

fn map_view(p: &SceneParams, scene: &Scene) -> Result<MapView, String> {
    let map = spatial::category_aware_map(
        &scene.sample.spatial_matrix(),
        scene.sample.grid(),
        &scene.classes.to_matrix(),
        p.map_temperature,
    )
    .map_err(|e| e.to_string())?;
    let mut topk = spatial::topk_regions(&map, p.topk);
    topk.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b)));
    Ok(MapView {
        side: p.side,
        significant_regions: spatial::significant_region_count(&map.values, p.threshold),
        object_regions: scene.object_mask.iter().filter(|&&m| m).count(),
        values: map.values,
        object_mask: scene.object_mask.clone(),
        topk,
    })
}

#[derive(Serialize)]
struct ModeView {
    mode: Mode,
    pred: usize,
    probabilities: Vec<f64>,
}

#[derive(Serialize)]
struct Learner {
    bias: Vec<f64>,
    /// Entropy before the first step, then after each step.
    entropy: Vec<f64>,
    kept: Vec<usize>,
}

impl Learner {
    fn from_pair(pair: &Option<(gs_bias::BiasVector, TTATrace)>) -> Option<Self> {
        pair.as_ref().map(|(b, t)| Learner {
            bias: b.as_slice().to_vec(),
            entropy: std::iter::once(t.initial_entropy).chain(t.entropies.iter().copied()).collect(),
            kept: t.kept.clone(),
        })
    }
}

#[derive(Serialize)]
struct AdaptView {
    names: Vec<String>,
    label: usize,
    distractor: usize,
    zero_shot_logits: Vec<f64>,
    modes: Vec<ModeView>,
    global: Option<Learner>,
    spatial: Option<Learner>,
    map: MapView,
}

pub fn adapt_scene_json(params: &str) -> Result<String, String> {
    let p: SceneParams = serde_json::from_str(params).map_err(|e| e.to_string())?;
    let scene = build_scene(&p)?;
    let adaptation =
        Adaptation::compute(&scene.sample, &scene.classes, &p.config(), true, true).map_err(|e| e.to_string())?;
    let modes = Mode::ALL
        .iter()
        .map(|&mode| {
            let r = adaptation.result(mode).map_err(|e| e.to_string())?;
            Ok(ModeView { mode, pred: r.predicted_class, probabilities: numerics::softmax(&r.fused_logits) })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let view = AdaptView {
        names: scene.classes.names().to_vec(),
        label: p.object_class,
        distractor: scene.distractor,
        zero_shot_logits: adaptation.zero_shot_logits.clone(),
        modes,
        global: Learner::from_pair(&adaptation.global),
        spatial: Learner::from_pair(&adaptation.spatial),
        map: map_view(&p, &scene)?,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

pub fn relevance_map_json(params: &str) -> Result<String, String> {
    let p: SceneParams = serde_json::from_str(params).map_err(|e| e.to_string())?;
    let scene = build_scene(&p)?;
    serde_json::to_string(&map_view(&p, &scene)?).map_err(|e| e.to_string())
}

pub fn gradcheck_json(seed: u64, trials: usize) -> Result<String, String> {
    let cfg = GradCheckConfig { seed, trials, ..Default::default() };
    let report = gradcheck::run_gradcheck(&cfg).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

/// Adapts a synthetic scene under every mode.
#[wasm_bindgen]
pub fn adapt_scene(params: &str) -> Result<String, JsError> {
    adapt_scene_json(params).map_err(|e| JsError::new(&e))
}

/// Relevance map, ranked Top-K regions and significant-region count.
#[wasm_bindgen]
pub fn relevance_map(params: &str) -> Result<String, JsError> {
    relevance_map_json(params).map_err(|e| JsError::new(&e))
}

/// Finite-difference check of the entropy gradient on random instances.
#[wasm_bindgen]
pub fn gradient_check(seed: u32, trials: u32) -> Result<String, JsError> {
    gradcheck_json(seed as u64, trials as usize).map_err(|e| JsError::new(&e))
}
