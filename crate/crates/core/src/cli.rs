//! The `chanprune` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{bench_layers, bench_synthetic, SyntheticLayer};
use crate::engine::{apply_plan_weights, capture_activations, evaluate_accuracy, CaptureMode, Dataset, WeightStore};
use crate::error::{Error, Result};
use crate::metrics::{score_layer, ChannelScore, Metric, MetricConfig};
use crate::netgraph::{pruning_counts, zoo, NetworkGraph, PruningPlan, Shape};
use crate::report::{self, check_csv, CsvKind};
use crate::sensitivity::{
    analyze, analyze_ratio_baseline, iterate, scoring_subset, score_layers, select_and_plan, uniform_prune_with_scores,
    uniform_scores, RunConfig, SensitivityReport,
};
use crate::synth;
use crate::tensorstore::{LabelFile, Tensor};

#[derive(Debug, Parser)]
#[command(name = "chanprune", version, about = "Discriminant channel scoring and FLOP-normalized pruning")]
pub struct Cli {
    /// Worker threads for channel and layer parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Re-read and validate every file this command writes.
    #[arg(long, global = true)]
    pub check: bool,
    /// Seed for every random choice (subsampling, random scores, synthesis).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score the channels of one or more layers.
    Score(ScoreArgs),
    /// Prune the lowest-scored r% of channels in every prunable layer.
    UniformPrune(UniformArgs),
    /// FLOP-normalized per-layer sensitivity analysis.
    Sensitivity(SensitivityArgs),
    /// Turn a sensitivity report into a pruning plan for its k least sensitive layers.
    Plan(PlanArgs),
    /// Apply a pruning plan to an architecture and its weights.
    Prune(PruneArgs),
    /// Top-1 accuracy on a labeled dataset.
    Eval(EvalArgs),
    /// Per-layer FLOSS and prune counts.
    Floss(FlossArgs),
    /// Per-layer FLOPs and parameters.
    Flops(FlopsArgs),
    /// Time channel scoring per layer and metric.
    Bench(BenchArgs),
    /// Write a built-in architecture.
    Zoo(ZooArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Repeated sensitivity, plan and prune cycles.
    Iterate(IterateArgs),
    /// Write one layer's channel responses `[N, C, W, H]` for plotting.
    Capture(CaptureArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Architecture JSON, or `zoo:NAME` for a built-in network.
    #[arg(long)]
    pub arch: Option<String>,
    /// Weight manifest JSON or the directory holding `manifest.json`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input tensor `[N, C, W, H]`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Label file matching `--data`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    /// Inputs used for channel scoring (default: `--data`).
    #[arg(long)]
    pub scoring_data: Option<PathBuf>,
    #[arg(long)]
    pub scoring_labels: Option<PathBuf>,
    /// Score on a seeded subsample of at most this many inputs.
    #[arg(long)]
    pub scoring_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    #[arg(long, default_value = "gsd")]
    pub metric: Metric,
    /// Score a layer's own output (`pre`) or the relu after it (`post`).
    #[arg(long, default_value = "post")]
    pub capture: CaptureMode,
    /// DI ridge.
    #[arg(long, default_value_t = 1e-4)]
    pub ridge: f64,
    /// MMD kernel bandwidth.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Variance floor; 0 disables it.
    #[arg(long, default_value_t = 1e-12)]
    pub epsilon: f64,
    /// MMD samples per side.
    #[arg(long, default_value_t = 256)]
    pub mmd_cap: usize,
}

impl MetricArgs {
    fn config(&self, seed: u64) -> MetricConfig {
        MetricConfig {
            ridge_rho: self.ridge,
            kernel_sigma: self.sigma,
            variance_epsilon: self.epsilon,
            mmd_max_per_class: self.mmd_cap,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Layers to score (repeatable; default: every prunable layer).
    #[arg(long = "layer")]
    pub layers: Vec<String>,
    /// Score a raw activation dump `[N, C, W, H]` instead of running a model.
    #[arg(long, conflicts_with_all = ["arch", "weights", "data"])]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub scoring_samples: Option<usize>,
    /// CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UniformArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Percent of channels to remove per layer; comma-separated for a sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ratio: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pruned architecture (single ratio only).
    #[arg(long)]
    pub out_arch: Option<PathBuf>,
    /// Pruned weight directory (single ratio only).
    #[arg(long)]
    pub out_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Comparison mode: prune this percent of every layer instead of a FLOP-normalized count.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full JSON report including the run configuration.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub arch: String,
    /// JSON report from `sensitivity --json`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub out_arch: PathBuf,
    #[arg(long)]
    pub out_weights: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct FlossArgs {
    #[arg(long)]
    pub arch: String,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub arch: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Layers to time when benchmarking a model (default: every prunable layer).
    #[arg(long = "layer")]
    pub layers: Vec<String>,
    /// Metrics to time.
    #[arg(long = "metric", value_delimiter = ',', default_value = "gsd,di")]
    pub metrics: Vec<Metric>,
    #[arg(long, default_value = "post")]
    pub capture: CaptureMode,
    /// Time only the first this-many channels of each layer.
    #[arg(long)]
    pub max_channels: Option<usize>,
    /// Synthetic layer width in channels (used when no model is given).
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 3000)]
    pub samples: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ZooName {
    Vgg16,
    Resnet50,
    ToyCnn,
    ToyResnet,
    SignalNoise,
}

#[derive(Debug, Args)]
pub struct ZooArgs {
    pub name: ZooName,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write weights here: exact for signal-noise, seeded random otherwise.
    #[arg(long)]
    pub out_weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// 4-class 3x12x12 bar images for the toy CNN.
    ToyImages,
    /// 8-feature inputs for the signal-noise network.
    SignalNoise,
    /// Raw 2-channel activations: one class-separated channel, one uninformative.
    TwoChannel,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub kind: SynthKind,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Noise std for toy images; class separation for two-channel.
    #[arg(long)]
    pub noise: Option<f32>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub out_labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct IterateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub cycles: usize,
    /// One `cycle<i>` subdirectory per completed cycle.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CaptureArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub layer: String,
    #[arg(long, default_value = "post")]
    pub capture: CaptureMode,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?
            .install(|| dispatch(&cli)),
        None => dispatch(&cli),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = Ctx { seed: cli.seed, check: cli.check };
    match &cli.command {
        Command::Score(a) => ctx.score(a),
        Command::UniformPrune(a) => ctx.uniform(a),
        Command::Sensitivity(a) => ctx.sensitivity(a),
        Command::Plan(a) => ctx.plan(a),
        Command::Prune(a) => ctx.prune(a),
        Command::Eval(a) => ctx.eval(a),
        Command::Floss(a) => ctx.floss(a),
        Command::Flops(a) => ctx.flops(a),
        Command::Bench(a) => ctx.bench(a),
        Command::Zoo(a) => ctx.zoo(a),
        Command::Synth(a) => ctx.synth(a),
        Command::Iterate(a) => ctx.iterate(a),
        Command::Capture(a) => ctx.capture(a),
    }
}

fn required<'a, T: ?Sized>(v: Option<&'a T>, flag: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::Config(format!("{flag} is required")))
}

/// Built-in graph for `zoo:NAME`, else the JSON file at `spec`.
pub fn load_arch(spec: &str) -> Result<NetworkGraph> {
    match spec.strip_prefix("zoo:") {
        Some(name) => {
            let name = ZooName::from_str(name, true).map_err(|_| {
                Error::Config(format!(
                    "unknown zoo network {name:?}; expected vgg16, resnet50, toy-cnn, toy-resnet or signal-noise"
                ))
            })?;
            Ok(zoo_graph(name))
        }
        None => NetworkGraph::load(spec),
    }
}

fn zoo_graph(name: ZooName) -> NetworkGraph {
    match name {
        ZooName::Vgg16 => zoo::vgg16(),
        ZooName::Resnet50 => zoo::resnet50(),
        ZooName::ToyCnn => zoo::toy_cnn(),
        ZooName::ToyResnet => zoo::toy_resnet(Shape::new(3, 12, 12), 2, 2, 4),
        ZooName::SignalNoise => synth::signal_noise_model().0,
    }
}

fn load_weights(path: &Path) -> Result<WeightStore> {
    if path.is_dir() {
        WeightStore::load(path.join("manifest.json"))
    } else {
        WeightStore::load(path)
    }
}

struct Ctx {
    seed: u64,
    check: bool,
}

impl Ctx {
    fn model(&self, m: &ModelArgs) -> Result<(NetworkGraph, WeightStore)> {
        let graph = load_arch(required(m.arch.as_deref(), "--arch")?)?;
        let weights = load_weights(required(m.weights.as_deref(), "--weights")?)?;
        weights.check(&graph)?;
        Ok((graph, weights))
    }

    fn dataset(&self, d: &DataArgs) -> Result<Dataset> {
        Dataset::load(
            required(d.data.as_deref(), "--data")?,
            required(d.labels.as_deref(), "--labels")?,
        )
    }

    fn scoring_set(&self, s: &ScoringArgs, fallback: &Dataset) -> Result<Dataset> {
        match (&s.scoring_data, &s.scoring_labels) {
            (Some(d), Some(l)) => Dataset::load(d, l),
            (None, None) => Ok(fallback.clone()),
            _ => Err(Error::Config("--scoring-data and --scoring-labels go together".into())),
        }
    }

    fn run_config(&self, m: &MetricArgs, alpha: f64, k: usize, scoring_samples: Option<usize>) -> RunConfig {
        RunConfig {
            alpha,
            k,
            metric: m.metric,
            metric_config: m.config(self.seed),
            scoring_samples,
            seed: self.seed,
            capture: m.capture,
        }
    }

    /// Writes CSV bytes to `out` or stdout, then re-validates under `--check`.
    fn emit_csv(&self, out: Option<&Path>, bytes: Vec<u8>, kind: CsvKind) -> Result<()> {
        match out {
            Some(p) => {
                write_file(p, &bytes)?;
                if self.check {
                    let back = fs::read(p).map_err(|e| Error::io(p, e))?;
                    check_csv(&back[..], kind)?;
                }
            }
            None => {
                if self.check {
                    check_csv(&bytes[..], kind)?;
                }
                std::io::stdout().write_all(&bytes).map_err(|e| Error::io("<stdout>", e))?;
            }
        }
        Ok(())
    }

    fn save_graph(&self, graph: &NetworkGraph, path: &Path) -> Result<()> {
        graph.save(path)?;
        if self.check && NetworkGraph::load(path)?.to_json_string() != graph.to_json_string() {
            return Err(Error::Graph(format!("{} does not read back identically", path.display())));
        }
        Ok(())
    }

    fn save_weights(&self, graph: &NetworkGraph, weights: &WeightStore, dir: &Path) -> Result<()> {
        weights.save(dir)?;
        if self.check {
            let back = WeightStore::load(dir.join("manifest.json"))?;
            back.check(graph)?;
            if back != *weights {
                return Err(Error::Weights(format!("{} does not read back identically", dir.display())));
            }
        }
        Ok(())
    }

    fn save_plan(&self, graph: &NetworkGraph, plan: &PruningPlan, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p) => {
                plan.save(p)?;
                if self.check {
                    let back = PruningPlan::load(p)?;
                    back.validate(graph)?;
                    if back != *plan {
                        return Err(Error::Plan(format!("{} does not read back identically", p.display())));
                    }
                }
            }
            None => {
                if self.check {
                    plan.validate(graph)?;
                }
                println!("{}", plan.to_json_string());
            }
        }
        Ok(())
    }

    fn save_report(&self, report: &SensitivityReport, path: &Path) -> Result<()> {
        write_file(path, report.to_json_string().as_bytes())?;
        if self.check {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let back: SensitivityReport = serde_json::from_str(&text)?;
            if back.rows.len() != report.rows.len() || back.config != report.config {
                return Err(Error::Config(format!("{} does not read back identically", path.display())));
            }
        }
        Ok(())
    }

    fn score(&self, a: &ScoreArgs) -> Result<()> {
        let mcfg = a.metric.config(self.seed);
        let scores: Vec<ChannelScore> = match &a.activations {
            Some(path) => {
                let acts = Tensor::load(path)?;
                let labels = LabelFile::load(required(a.data.labels.as_deref(), "--labels")?)?;
                let id = match a.layers.as_slice() {
                    [] => "activations".to_string(),
                    [one] => one.clone(),
                    _ => return Err(Error::Config("--activations takes at most one --layer".into())),
                };
                score_layer(&acts, &labels, labels.inferred_classes(), &id, a.metric.metric, &mcfg)?
            }
            None => {
                let (graph, weights) = self.model(&a.model)?;
                let data = scoring_subset(&self.dataset(&a.data)?, a.scoring_samples, self.seed)?;
                let ids = if a.layers.is_empty() {
                    graph.prunable_layers().into_iter().map(|i| graph.layer(i).id.clone()).collect()
                } else {
                    a.layers.clone()
                };
                if ids.is_empty() {
                    return Err(Error::Config("no layers to score".into()));
                }
                score_layers(&graph, &weights, &data, &ids, a.metric.metric, &mcfg, a.metric.capture)?
                    .into_values()
                    .flatten()
                    .collect()
            }
        };
        let mut buf = Vec::new();
        report::write_scores(&mut buf, &scores)?;
        self.emit_csv(a.out.as_deref(), buf, CsvKind::Scores)
    }

    fn uniform(&self, a: &UniformArgs) -> Result<()> {
        let (graph, weights) = self.model(&a.model)?;
        let val = self.dataset(&a.data)?;
        let scoring = scoring_subset(&self.scoring_set(&a.scoring, &val)?, a.scoring.scoring_samples, self.seed)?;
        let saving = a.out_arch.is_some() || a.out_weights.is_some();
        if saving && a.ratio.len() != 1 {
            return Err(Error::Config("--out-arch/--out-weights need exactly one --ratio".into()));
        }
        let mcfg = a.metric.config(self.seed);
        let scores = uniform_scores(&graph, &weights, &scoring, a.metric.metric, &mcfg, a.metric.capture)?;
        let mut points = Vec::with_capacity(a.ratio.len());
        for &r in &a.ratio {
            let (point, _, g, w) = uniform_prune_with_scores(&graph, &weights, &val, a.metric.metric, &scores, r)?;
            if let Some(p) = &a.out_arch {
                self.save_graph(&g, p)?;
            }
            if let Some(d) = &a.out_weights {
                self.save_weights(&g, &w, d)?;
            }
            points.push(point);
        }
        let mut buf = Vec::new();
        report::write_uniform(&mut buf, &points)?;
        self.emit_csv(a.out.as_deref(), buf, CsvKind::Uniform)
    }

    fn sensitivity(&self, a: &SensitivityArgs) -> Result<()> {
        let (graph, weights) = self.model(&a.model)?;
        let val = self.dataset(&a.data)?;
        let scoring = self.scoring_set(&a.scoring, &val)?;
        let cfg = self.run_config(&a.metric, a.alpha, 1, a.scoring.scoring_samples);
        let report = match a.ratio {
            Some(r) => analyze_ratio_baseline(&graph, &weights, &val, &scoring, &cfg, r / 100.0)?,
            None => analyze(&graph, &weights, &val, &scoring, &cfg)?,
        };
        for id in &report.excluded {
            eprintln!("note: layer {id} excluded (prune count rounds to 0)");
        }
        for id in &report.table.too_narrow {
            eprintln!("note: layer {id} excluded (fewer than 2 channels)");
        }
        if let Some(p) = &a.json {
            self.save_report(&report, p)?;
        }
        let mut buf = Vec::new();
        report::write_sensitivity(&mut buf, &report)?;
        self.emit_csv(a.out.as_deref(), buf, CsvKind::Sensitivity)
    }

    fn plan(&self, a: &PlanArgs) -> Result<()> {
        let graph = load_arch(&a.arch)?;
        let text = fs::read_to_string(&a.report).map_err(|e| Error::io(&a.report, e))?;
        let report: SensitivityReport = serde_json::from_str(&text)?;
        let plan = select_and_plan(&graph, &report, a.k)?;
        self.save_plan(&graph, &plan, a.out.as_deref())
    }

    fn prune(&self, a: &PruneArgs) -> Result<()> {
        let (graph, weights) = self.model(&a.model)?;
        let plan = PruningPlan::load(&a.plan)?;
        let (g, w) = apply_plan_weights(&graph, &weights, &plan)?;
        self.save_graph(&g, &a.out_arch)?;
        self.save_weights(&g, &w, &a.out_weights)?;
        eprintln!(
            "removed {} channels: {} -> {} FLOPs, {} -> {} params",
            plan.removed_channels(),
            graph.flop_count(),
            g.flop_count(),
            graph.param_count(),
            g.param_count()
        );
        Ok(())
    }

    fn eval(&self, a: &EvalArgs) -> Result<()> {
        let (graph, weights) = self.model(&a.model)?;
        let data = self.dataset(&a.data)?;
        let acc = evaluate_accuracy(&graph, &weights, &data)?;
        println!("{}", report::fmt_g9(acc));
        Ok(())
    }

    fn floss(&self, a: &FlossArgs) -> Result<()> {
        let graph = load_arch(&a.arch)?;
        let table = pruning_counts(&graph, a.alpha)?;
        let mut buf = Vec::new();
        report::write_floss(&mut buf, &table)?;
        self.emit_csv(a.out.as_deref(), buf, CsvKind::Floss)
    }

    fn flops(&self, a: &FlopsArgs) -> Result<()> {
        let graph = load_arch(&a.arch)?;
        let mut buf = Vec::new();
        report::write_flops(&mut buf, &graph)?;
        self.emit_csv(a.out.as_deref(), buf, CsvKind::Flops)
    }

    fn bench(&self, a: &BenchArgs) -> Result<()> {
        let mcfg = MetricConfig { seed: self.seed, ..MetricConfig::default() };
        if a.metrics.is_empty() {
            return Err(Error::Config("no metrics to time".into()));
        }
        let rows = if a.model.arch.is_some() {
            let (graph, weights) = self.model(&a.model)?;
            let data = self.dataset(&a.data)?;
            let ids = if a.layers.is_empty() {
                graph.prunable_layers().into_iter().map(|i| graph.layer(i).id.clone()).collect()
            } else {
                a.layers.clone()
            };
            bench_layers(&graph, &weights, &data, &ids, &a.metrics, &mcfg, a.capture, a.max_channels)?
        } else {
            let layer = SyntheticLayer {
                layer_id: a.layers.first().cloned().unwrap_or_else(|| "synthetic".into()),
                channels: a.channels,
                width: a.width,
                height: a.height,
                samples: a.samples,
                classes: a.classes,
                seed: self.seed,
            };
            bench_synthetic(&layer, &a.metrics, &mcfg, a.max_channels)?
        };
        let mut buf = Vec::new();
        report::write_bench(&mut buf, &rows)?;
        self.emit_csv(a.out.as_deref(), buf, CsvKind::Bench)
    }

    fn zoo(&self, a: &ZooArgs) -> Result<()> {
        let (graph, weights) = match a.name {
            ZooName::SignalNoise => synth::signal_noise_model(),
            name => {
                let g = zoo_graph(name);
                let w = if a.out_weights.is_some() { WeightStore::random(&g, self.seed) } else { WeightStore::new() };
                (g, w)
            }
        };
        self.save_graph(&graph, &a.out)?;
        if let Some(d) = &a.out_weights {
            self.save_weights(&graph, &weights, d)?;
        }
        Ok(())
    }

    fn synth(&self, a: &SynthArgs) -> Result<()> {
        let (inputs, labels) = match a.kind {
            SynthKind::ToyImages => {
                let d = synth::toy_images(a.samples, a.noise.unwrap_or(0.5), self.seed)?;
                (d.inputs().clone(), d.labels().clone())
            }
            SynthKind::SignalNoise => {
                let d = synth::signal_noise_data(a.samples, self.seed)?;
                (d.inputs().clone(), d.labels().clone())
            }
            SynthKind::TwoChannel => {
                let per_class = a.samples.div_ceil(2);
                synth::two_channel_set(per_class, 2, 4, 4, a.noise.unwrap_or(2.0), self.seed)?
            }
        };
        inputs.save(&a.out)?;
        labels.save(&a.out_labels)?;
        if self.check && (Tensor::load(&a.out)? != inputs || LabelFile::load(&a.out_labels)? != labels) {
            return Err(Error::Shape("synthetic data does not read back identically".into()));
        }
        Ok(())
    }

    fn capture(&self, a: &CaptureArgs) -> Result<()> {
        let (graph, weights) = self.model(&a.model)?;
        let data = self.dataset(&a.data)?;
        let acts = capture_activations(&graph, &weights, &data, &a.layer, a.capture)?;
        acts.save(&a.out)?;
        if self.check && Tensor::load(&a.out)? != acts {
            return Err(Error::Shape(format!("{} does not read back identically", a.out.display())));
        }
        Ok(())
    }

    fn iterate(&self, a: &IterateArgs) -> Result<()> {
        let (graph, weights) = self.model(&a.model)?;
        let val = self.dataset(&a.data)?;
        let scoring = self.scoring_set(&a.scoring, &val)?;
        let cfg = self.run_config(&a.metric, a.alpha, a.k, a.scoring.scoring_samples);
        let outcome = iterate(&graph, &weights, &val, &scoring, &cfg, a.cycles)?;
        let mut prev = &graph;
        for (i, c) in outcome.cycles.iter().enumerate() {
            let dir = a.out_dir.join(format!("cycle{}", i + 1));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            self.save_report(&c.report, &dir.join("report.json"))?;
            let mut buf = Vec::new();
            report::write_sensitivity(&mut buf, &c.report)?;
            self.emit_csv(Some(&dir.join("sensitivity.csv")), buf, CsvKind::Sensitivity)?;
            self.save_plan(prev, &c.plan, Some(&dir.join("plan.json")))?;
            self.save_graph(&c.graph, &dir.join("arch.json"))?;
            self.save_weights(&c.graph, &c.weights, &dir.join("weights"))?;
            println!(
                "cycle {}: pruned {} channels, {} FLOPs, baseline accuracy {}",
                i + 1,
                c.plan.removed_channels(),
                c.graph.flop_count(),
                report::fmt_g9(c.report.baseline_acc)
            );
            prev = &c.graph;
        }
        match outcome.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
