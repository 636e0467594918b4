// SPDX-License-Identifier: Apache-2.0

//! The `gsbias` command line.
//!
//! Exit codes: 0 on success, 1 when the inputs or the computation fail,
//! 2 when the invocation itself is malformed.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gs_bias::gradcheck::{self, GradCheckConfig};
use gs_bias::io::{self, GsbeFile};
use gs_bias::numerics::{self, Matrix};
use gs_bias::pipeline::{self, Mode, Preset, ReportFormat, TTAConfig};
use gs_bias::spatial::{self, SIGNIFICANCE_THRESHOLD};
use gs_bias::{Error, Result};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gsbias", version, about = "Test-time adaptation with global and spatial logit biases")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adapt a single sample and print its fused scores as JSON.
    Adapt(AdaptArgs),
    /// Evaluate every sample of a manifest and write an accuracy report.
    Eval(EvalArgs),
    /// Print the header and summary statistics of a GSBE file.
    Inspect(InspectArgs),
    /// Compare the analytic entropy gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the significant-region count and Top-K regions of the relevance map.
    Regions(RegionsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    CrossDataset,
    DomainGen,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::CrossDataset => Preset::CrossDataset,
            PresetArg::DomainGen => Preset::DomainGen,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Zeroshot,
    Global,
    Spatial,
    Both,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Zeroshot => Mode::ZeroShot,
            ModeArg::Global => Mode::Global,
            ModeArg::Spatial => Mode::Spatial,
            ModeArg::Both => Mode::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

/// Hyper-parameters. Anything left unset comes from the preset.
#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[arg(long, value_enum, default_value = "cross-dataset")]
    pub preset: PresetArg,
    /// Global bias learning rate.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Spatial bias learning rate.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Fraction of views kept for the global bias.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Number of regions kept for the spatial bias.
    #[arg(long)]
    pub topk: Option<usize>,
    /// Gradient steps for both learners.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Temperature of the cosine logits.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Temperature of the relevance map.
    #[arg(long)]
    pub map_temperature: Option<f64>,
}

impl TuneArgs {
    pub fn config(&self, mode: Mode) -> TTAConfig {
        let mut cfg = Preset::from(self.preset).config();
        if let Some(v) = self.alpha {
            cfg.global.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.spatial.beta = v;
        }
        if let Some(v) = self.rho {
            cfg.global.rho = v;
        }
        if let Some(v) = self.topk {
            cfg.spatial.topk = v;
        }
        if let Some(v) = self.steps {
            cfg.global.steps = v;
            cfg.spatial.steps = v;
        }
        if let Some(v) = self.tau {
            cfg.temperature = v;
        }
        if let Some(v) = self.map_temperature {
            cfg.spatial.map_temperature = v;
        }
        cfg.mode = mode;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub sample: PathBuf,
    #[arg(long)]
    pub classes: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub tune: TuneArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset manifest.
    #[arg(long, visible_alias = "manifest")]
    pub samples: PathBuf,
    /// Overrides the class file named in the manifest.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "zeroshot,global,spatial,both")]
    pub modes: Vec<ModeArg>,
    /// Report destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: u32,
    /// Include per-sample predictions in JSON reports.
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub tune: TuneArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
    pub trials: u32,
}

#[derive(Debug, Args)]
pub struct RegionsArgs {
    #[arg(long, required_unless_present = "samples", conflicts_with = "samples")]
    pub sample: Option<PathBuf>,
    /// Manifest; prints the dataset average of the significant-region count.
    #[arg(long, visible_alias = "manifest")]
    pub samples: Option<PathBuf>,
    /// Required with --sample; defaults to the manifest's class file.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long, default_value_t = SIGNIFICANCE_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = spatial::DEFAULT_TOPK)]
    pub topk: usize,
    #[arg(long, default_value_t = 1.0)]
    pub map_temperature: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(&cli.command, &mut out) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error [{}]: {e}", e.kind_name());
            EXIT_DOMAIN
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

fn usage(r: Result<()>) -> std::result::Result<(), Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn emit(out: &mut dyn Write, text: &str) -> std::result::Result<(), Failure> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure::Domain(Error::Io { path: PathBuf::from("<stdout>"), source: e }))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn execute(command: &Command, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    match command {
        Command::Adapt(a) => cmd_adapt(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Inspect(a) => cmd_inspect(&a.path, out),
        Command::Gradcheck(a) => {
            let cfg = GradCheckConfig { seed: a.seed, trials: a.trials as usize, ..Default::default() };
            cmd_gradcheck(&cfg, numerics::mean_softmax_entropy_gradient, out)
        }
        Command::Regions(a) => cmd_regions(a, out),
    }
}

#[derive(Serialize)]
struct AdaptOutput<'a> {
    sample: String,
    mode: Mode,
    pred: usize,
    pred_name: &'a str,
    zeroshot_pred: usize,
    label: i64,
    scores: &'a [f64],
    probabilities: Vec<f64>,
    zeroshot_scores: &'a [f64],
    global_bias: &'a [f64],
    spatial_bias: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    global_entropy: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spatial_entropy: Option<Vec<f64>>,
}

fn entropy_curve(t: &gs_bias::TTATrace) -> Vec<f64> {
    std::iter::once(t.initial_entropy).chain(t.entropies.iter().copied()).collect()
}

fn cmd_adapt(a: &AdaptArgs, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let cfg = a.tune.config(a.mode.into());
    usage(cfg.validate())?;
    let classes = io::read_class_file(&a.classes)?;
    let rec = io::read_sample_file(&a.sample)?;
    let r = pipeline::adapt_sample(&rec, &classes, &cfg).map_err(|e| e.in_file(&a.sample))?;
    let doc = AdaptOutput {
        sample: a.sample.display().to_string(),
        mode: cfg.mode,
        pred: r.predicted_class,
        pred_name: &classes.names()[r.predicted_class],
        zeroshot_pred: r.zero_shot_class,
        label: rec.label().map_or(-1, |l| l as i64),
        scores: &r.fused_logits,
        probabilities: numerics::softmax(&r.fused_logits),
        zeroshot_scores: &r.zero_shot_logits,
        global_bias: r.global_bias.as_slice(),
        spatial_bias: r.spatial_bias.as_slice(),
        global_entropy: r.global_trace.as_ref().map(entropy_curve),
        spatial_entropy: r.spatial_trace.as_ref().map(entropy_curve),
    };
    emit(out, &to_json(&doc))?;
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let cfg = a.tune.config(Mode::Both);
    usage(cfg.validate())?;
    let modes: Vec<Mode> = a.modes.iter().map(|&m| m.into()).collect();
    let mut manifest = io::read_manifest(&a.samples)?;
    if let Some(c) = &a.classes {
        manifest.class_file = c.clone();
    }
    let mut report = pipeline::evaluate_dataset(&manifest, &cfg, &modes, a.jobs as usize)?;
    if !a.verbose {
        report = report.without_samples();
    }
    let format = ReportFormat::from(a.format);
    match &a.out {
        Some(path) => {
            pipeline::emit_report(&report, path, format)?;
            let mut summary = String::new();
            for (mode, s) in &report.modes {
                summary.push_str(&format!("{mode}\t{:.4}\t{}\n", s.top1, s.n));
            }
            emit(out, &summary)?;
        }
        None => emit(out, &pipeline::render_report(&report, format))?,
    }
    Ok(EXIT_OK)
}

fn summary_line(label: &str, values: &[f32]) -> String {
    let (mut min, mut max, mut sum) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v as f64;
    }
    let mean = if values.is_empty() { 0.0 } else { sum / values.len() as f64 };
    format!("{label}: min {min:.6} max {max:.6} mean {mean:.6}\n")
}

fn row_norm_line(label: &str, m: &Matrix) -> String {
    let norms: Vec<f32> = m.iter_rows().map(|r| numerics::l2_norm(r) as f32).collect();
    summary_line(label, &norms)
}

pub fn cmd_inspect(path: &Path, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let mut text = format!("file: {}\nversion: {}\n", path.display(), io::VERSION);
    match io::read_any_file(path)? {
        GsbeFile::Classes(set) => {
            text.push_str(&format!(
                "kind: classes ({})\nclasses: {}\ndim: {}\n",
                io::KIND_CLASSES,
                set.class_count(),
                set.dim()
            ));
            text.push_str(&summary_line("values", set.embeddings()));
            text.push_str(&row_norm_line("row norms", &set.to_matrix()));
            text.push_str("names:\n");
            for (i, name) in set.names().iter().enumerate() {
                text.push_str(&format!("  {i}\t{name}\n"));
            }
        }
        GsbeFile::Sample(rec) => {
            let g = rec.grid();
            let label = rec.label().map_or_else(|| "unknown".to_string(), |l| l.to_string());
            text.push_str(&format!(
                "kind: sample ({})\nviews: {}\ndim: {}\ngrid: {} x {}\nlabel: {}\n",
                io::KIND_SAMPLE,
                rec.view_count(),
                rec.dim(),
                g.width,
                g.height,
                label
            ));
            text.push_str(&summary_line("view values", rec.view_features()));
            text.push_str(&row_norm_line("view norms", &rec.views_matrix()));
            text.push_str(&summary_line("spatial values", rec.spatial_features()));
            text.push_str(&row_norm_line("spatial norms", &rec.spatial_matrix()));
        }
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

/// Runs the finite-difference check against `kernel`. Returns 1 when the
/// check fails.
pub fn cmd_gradcheck<K>(
    cfg: &GradCheckConfig,
    kernel: K,
    out: &mut dyn Write,
) -> std::result::Result<i32, Failure>
where
    K: Fn(&Matrix, &[f64]) -> Result<Vec<f64>>,
{
    let report = gradcheck::run_gradcheck_with(cfg, kernel)?;
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    let text = format!(
        "trials: {}\nseed: {}\nmax relative error: {:.3e}\nworst trial: {} ({} rows x {} classes)\ntolerance: {:.0e}\n{verdict}\n",
        report.trials,
        cfg.seed,
        report.max_rel_error,
        report.worst_trial,
        report.worst_shape.0,
        report.worst_shape.1,
        cfg.tolerance,
    );
    emit(out, &text)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_DOMAIN })
}

#[derive(Debug, Serialize)]
pub struct RegionSummary {
    pub sample: String,
    pub grid: [usize; 2],
    pub significant_regions: usize,
    /// Top-K region indices, most relevant first.
    pub topk: Vec<usize>,
}

#[derive(Serialize)]
struct DatasetRegions {
    dataset: String,
    threshold: f64,
    mean_significant_regions: f64,
    samples: Vec<RegionSummary>,
}

/// Region indices of the `k` largest map values, most relevant first.
pub fn ranked_regions(values: &[f64], k: usize) -> Vec<usize> {
    let map = spatial::SpatialMap { shape: spatial::GridShape::new(values.len(), 1), values: values.to_vec() };
    let mut top = spatial::topk_regions(&map, k);
    top.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    top
}

fn regions_for(
    sample: &Path,
    label: String,
    classes: &Matrix,
    a: &RegionsArgs,
) -> Result<RegionSummary> {
    let rec = io::read_sample_file(sample)?;
    let map = spatial::category_aware_map(&rec.spatial_matrix(), rec.grid(), classes, a.map_temperature)
        .map_err(|e| e.in_file(sample))?;
    Ok(RegionSummary {
        sample: label,
        grid: [rec.grid().width, rec.grid().height],
        significant_regions: spatial::significant_region_count(&map.values, a.threshold),
        topk: ranked_regions(&map.values, a.topk),
    })
}

fn cmd_regions(a: &RegionsArgs, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    if !a.threshold.is_finite() {
        return Err(Failure::Usage("threshold must be finite".into()));
    }
    if a.topk == 0 {
        return Err(Failure::Usage("topk must be at least 1".into()));
    }
    if !(a.map_temperature.is_finite() && a.map_temperature > 0.0) {
        return Err(Failure::Usage("map temperature must be positive".into()));
    }
    let text = match (&a.sample, &a.samples) {
        (Some(sample), _) => {
            let Some(classes) = &a.classes else {
                return Err(Failure::Usage("--classes is required with --sample".into()));
            };
            let classes = io::read_class_file(classes)?.to_matrix();
            to_json(&regions_for(sample, sample.display().to_string(), &classes, a)?)
        }
        (None, Some(manifest_path)) => {
            let manifest = io::read_manifest(manifest_path)?;
            let class_file = a.classes.clone().unwrap_or(manifest.class_file.clone());
            let classes = io::read_class_file(&class_file)?.to_matrix();
            let samples = manifest
                .samples
                .iter()
                .map(|e| regions_for(&e.path, e.entry.clone(), &classes, a))
                .collect::<Result<Vec<_>>>()?;
            let total: usize = samples.iter().map(|s| s.significant_regions).sum();
            to_json(&DatasetRegions {
                dataset: manifest.dataset_name,
                threshold: a.threshold,
                mean_significant_regions: total as f64 / samples.len() as f64,
                samples,
            })
        }
        (None, None) => unreachable!("clap requires one of --sample or --samples"),
    };
    emit(out, &text)?;
    Ok(EXIT_OK)
}
