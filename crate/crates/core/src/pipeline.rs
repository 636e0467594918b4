// SPDX-License-Identifier: Apache-2.0

//! Per-sample adaptation and dataset evaluation.
//!
//! The fused score of a sample is `zero_shot + B_g + B_s`. The two biases
//! are learned independently, so every ablation mode is a choice of which
//! terms to include.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bias::{BiasVector, TTATrace};
use crate::error::{Error, Result};
use crate::global::{self, GlobalConfig};
use crate::io::{self, ClassEmbeddingSet, DatasetManifest, SampleRecord};
use crate::numerics::{self, Matrix};
use crate::spatial::{self, SpatialConfig};

/// CLIP's learned logit scale of 100.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;

/// Which bias terms enter the fused prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    ZeroShot,
    Global,
    Spatial,
    Both,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::ZeroShot, Mode::Global, Mode::Spatial, Mode::Both];

    pub fn uses_global(self) -> bool {
        matches!(self, Mode::Global | Mode::Both)
    }

    pub fn uses_spatial(self) -> bool {
        matches!(self, Mode::Spatial | Mode::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ZeroShot => "zeroshot",
            Mode::Global => "global",
            Mode::Spatial => "spatial",
            Mode::Both => "both",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTAConfig {
    pub global: GlobalConfig,
    pub spatial: SpatialConfig,
    /// Softmax temperature of the cosine logits.
    pub temperature: f64,
    pub mode: Mode,
}

impl Default for TTAConfig {
    fn default() -> Self {
        Preset::CrossDataset.config()
    }
}

impl TTAConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        self.global.validate()?;
        self.spatial.validate()
    }
}

/// Named hyper-parameter profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 8 views, rho 0.5, alpha 1, beta 1, K 16, 5 steps.
    CrossDataset,
    /// 64 views, rho 0.3, alpha 10, beta 1, K 16, 5 steps.
    DomainGen,
}

impl Preset {
    pub fn config(self) -> TTAConfig {
        let (alpha, rho) = match self {
            Preset::CrossDataset => (1.0, 0.5),
            Preset::DomainGen => (10.0, 0.3),
        };
        TTAConfig {
            global: GlobalConfig {
                alpha,
                rho,
                steps: 5,
            },
            spatial: SpatialConfig {
                beta: 1.0,
                topk: spatial::DEFAULT_TOPK,
                steps: 5,
                map_temperature: 1.0,
            },
            temperature: DEFAULT_TEMPERATURE,
            mode: Mode::Both,
        }
    }

    /// Number of augmented views the profile expects at extraction time.
    pub fn view_count(self) -> usize {
        match self {
            Preset::CrossDataset => 8,
            Preset::DomainGen => 64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::CrossDataset => "cross-dataset",
            Preset::DomainGen => "domain-gen",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-dataset" => Ok(Preset::CrossDataset),
            "domain-gen" => Ok(Preset::DomainGen),
            _ => Err(Error::InvalidConfig(format!("unknown preset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub predicted_class: usize,
    pub zero_shot_class: usize,
    pub zero_shot_logits: Vec<f64>,
    pub fused_logits: Vec<f64>,
    pub global_bias: BiasVector,
    pub spatial_bias: BiasVector,
    pub global_trace: Option<TTATrace>,
    pub spatial_trace: Option<TTATrace>,
    pub correct: Option<bool>,
}

/// Zero-shot logits plus whichever biases were learned for one sample.
#[derive(Debug, Clone)]
pub struct Adaptation {
    pub zero_shot_logits: Vec<f64>,
    pub global: Option<(BiasVector, TTATrace)>,
    pub spatial: Option<(BiasVector, TTATrace)>,
    label: Option<usize>,
}

impl Adaptation {
    /// Runs the requested learners for `rec`.
    pub fn compute(
        rec: &SampleRecord,
        classes: &ClassEmbeddingSet,
        cfg: &TTAConfig,
        with_global: bool,
        with_spatial: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        check_compatible(rec, classes)?;
        let class_matrix = numerics::l2_normalize_rows(&classes.to_matrix())?;
        let views = numerics::l2_normalize_rows(&rec.views_matrix())?;
        let view_logits = numerics::cosine_logits_normalized(&views, &class_matrix, cfg.temperature)?;
        let zero_shot_logits = view_logits.row(0).to_vec();

        let global = if with_global {
            Some(global::learn_global_bias(&view_logits, &cfg.global)?)
        } else {
            None
        };
        let spatial = if with_spatial {
            Some(learn_spatial(rec, &class_matrix, cfg)?)
        } else {
            None
        };
        Ok(Self {
            zero_shot_logits,
            global,
            spatial,
            label: rec.label(),
        })
    }

    /// Fuses the terms that `mode` asks for. Fails if a needed learner was
    /// not run.
    pub fn result(&self, mode: Mode) -> Result<SampleResult> {
        let c = self.zero_shot_logits.len();
        let pick = |wanted: bool, learned: &Option<(BiasVector, TTATrace)>, name: &str| {
            match (wanted, learned) {
                (false, _) => Ok((BiasVector::zeros(c), None)),
                (true, Some((b, t))) => Ok((b.clone(), Some(t.clone()))),
                (true, None) => Err(Error::InvalidConfig(format!(
                    "mode {mode} needs the {name} learner"
                ))),
            }
        };
        let (global_bias, global_trace) = pick(mode.uses_global(), &self.global, "global")?;
        let (spatial_bias, spatial_trace) = pick(mode.uses_spatial(), &self.spatial, "spatial")?;
        let fused_logits = fuse(&self.zero_shot_logits, &global_bias, &spatial_bias)?;
        let predicted_class = numerics::argmax(&fused_logits);
        Ok(SampleResult {
            predicted_class,
            zero_shot_class: numerics::argmax(&self.zero_shot_logits),
            zero_shot_logits: self.zero_shot_logits.clone(),
            fused_logits,
            global_bias,
            spatial_bias,
            global_trace,
            spatial_trace,
            correct: self.label.map(|l| l == predicted_class),
        })
    }
}

fn check_compatible(rec: &SampleRecord, classes: &ClassEmbeddingSet) -> Result<()> {
    if rec.dim() != classes.dim() {
        return Err(Error::DimensionMismatch {
            context: "sample feature width vs class embedding width",
            expected: classes.dim(),
            found: rec.dim(),
        });
    }
    if let Some(label) = rec.label() {
        if label >= classes.class_count() {
            return Err(Error::InvalidRecord(format!(
                "label {label} out of range for {} classes",
                classes.class_count()
            )));
        }
    }
    Ok(())
}

fn learn_spatial(
    rec: &SampleRecord,
    class_matrix: &Matrix,
    cfg: &TTAConfig,
) -> Result<(BiasVector, TTATrace)> {
    let grid = numerics::l2_normalize_rows(&rec.spatial_matrix())?;
    let region_logits = numerics::cosine_logits_normalized(&grid, class_matrix, cfg.temperature)?;
    let map = spatial::category_aware_map(&grid, rec.grid(), class_matrix, cfg.spatial.map_temperature)?;
    let selected = spatial::topk_regions(&map, cfg.spatial.topk);
    spatial::learn_spatial_bias(&region_logits, &selected, &cfg.spatial)
}

/// `(zero_shot + global) + spatial`, element by element.
pub fn fuse(zero_shot: &[f64], global_bias: &BiasVector, spatial_bias: &BiasVector) -> Result<Vec<f64>> {
    let with_global = global::add_bias(zero_shot, global_bias)?;
    global::add_bias(&with_global, spatial_bias)
}

/// Adapts one sample under `cfg.mode`.
pub fn adapt_sample(
    rec: &SampleRecord,
    classes: &ClassEmbeddingSet,
    cfg: &TTAConfig,
) -> Result<SampleResult> {
    Adaptation::compute(rec, classes, cfg, cfg.mode.uses_global(), cfg.mode.uses_spatial())?
        .result(cfg.mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub top1: f64,
    /// Labeled samples scored.
    pub n: usize,
}

/// Mean entropy over samples: the value before adaptation followed by one
/// entry per step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurves {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub path: String,
    /// Prediction under the most complete mode evaluated.
    pub pred: usize,
    pub zeroshot_pred: usize,
    /// `-1` when unknown.
    pub label: i64,
    pub preds: BTreeMap<Mode, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(flatten)]
    pub tta: TTAConfig,
    pub modes: Vec<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub config: ConfigEcho,
    pub sample_count: usize,
    pub modes: BTreeMap<Mode, ModeSummary>,
    pub entropy_curves: EntropyCurves,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleSummary>,
}

impl EvalReport {
    pub fn without_samples(mut self) -> Self {
        self.samples.clear();
        self
    }
}

/// Evaluates every sample in the manifest under each requested mode.
///
/// `jobs` bounds how many samples are adapted at once. Results are ordered
/// by manifest position regardless of completion order.
pub fn evaluate_dataset(
    manifest: &DatasetManifest,
    cfg: &TTAConfig,
    modes: &[Mode],
    jobs: usize,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut modes = modes.to_vec();
    modes.sort_unstable();
    modes.dedup();
    if modes.is_empty() {
        return Err(Error::InvalidConfig("no evaluation modes requested".into()));
    }
    if jobs == 0 {
        return Err(Error::InvalidConfig("jobs must be at least 1".into()));
    }
    let classes = io::read_class_file(&manifest.class_file)?;
    let with_global = modes.iter().any(|m| m.uses_global());
    let with_spatial = modes.iter().any(|m| m.uses_spatial());

    let run = |entry: &io::SampleEntry| -> Result<Adaptation> {
        let rec = io::read_sample_file(&entry.path)?;
        Adaptation::compute(&rec, &classes, cfg, with_global, with_spatial)
            .map_err(|e| e.in_file(&entry.path))
    };
    let adaptations = run_all(&manifest.samples, jobs, run)?;

    let mut correct: BTreeMap<Mode, usize> = modes.iter().map(|&m| (m, 0)).collect();
    let mut labeled = 0usize;
    let mut samples = Vec::with_capacity(adaptations.len());
    let primary = *modes.last().expect("non-empty");
    for (entry, adaptation) in manifest.samples.iter().zip(&adaptations) {
        let mut preds = BTreeMap::new();
        let mut zeroshot_pred = 0;
        for &mode in &modes {
            let r = adaptation.result(mode)?;
            if r.correct == Some(true) {
                *correct.get_mut(&mode).unwrap() += 1;
            }
            zeroshot_pred = r.zero_shot_class;
            preds.insert(mode, r.predicted_class);
        }
        if adaptation.label.is_some() {
            labeled += 1;
        }
        samples.push(SampleSummary {
            path: entry.entry.clone(),
            pred: preds[&primary],
            zeroshot_pred,
            label: adaptation.label.map_or(-1, |l| l as i64),
            preds,
        });
    }
    if labeled == 0 {
        return Err(Error::NoLabeledSamples);
    }

    let modes_summary = correct
        .into_iter()
        .map(|(mode, hits)| {
            let top1 = hits as f64 / labeled as f64;
            (mode, ModeSummary { top1, n: labeled })
        })
        .collect();
    let curve = |pick: fn(&Adaptation) -> Option<&TTATrace>| -> Option<Vec<f64>> {
        let traces: Vec<&TTATrace> = adaptations.iter().filter_map(pick).collect();
        mean_curve(&traces)
    };
    let entropy_curves = EntropyCurves {
        global: curve(|a| a.global.as_ref().map(|(_, t)| t)),
        spatial: curve(|a| a.spatial.as_ref().map(|(_, t)| t)),
    };

    Ok(EvalReport {
        dataset: manifest.dataset_name.clone(),
        config: ConfigEcho {
            tta: *cfg,
            modes: modes.clone(),
        },
        sample_count: manifest.samples.len(),
        modes: modes_summary,
        entropy_curves,
        samples,
    })
}

fn mean_curve(traces: &[&TTATrace]) -> Option<Vec<f64>> {
    let first = traces.first()?;
    let mut sum = vec![0.0; first.entropies.len() + 1];
    for t in traces {
        sum[0] += t.initial_entropy;
        sum[1..].iter_mut().zip(&t.entropies).for_each(|(s, h)| *s += h);
    }
    let n = traces.len() as f64;
    Some(sum.into_iter().map(|s| s / n).collect())
}

#[cfg(feature = "parallel")]
fn run_all<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    use rayon::prelude::*;
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_all<T, R, F>(items: &[T], _jobs: usize, f: F) -> Result<Vec<R>>
where
    F: Fn(&T) -> Result<R>,
{
    items.iter().map(f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidConfig(format!("unknown report format {s:?}"))),
        }
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from("mode,top1,n,sample_count\n");
            for (mode, m) in &report.modes {
                s.push_str(&format!("{mode},{},{},{}\n", m.top1, m.n, report.sample_count));
            }
            s
        }
    }
}

pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_report(report, format)).map_err(|e| Error::io(path, e))
}
