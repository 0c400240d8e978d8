//! FLOP-normalized sensitivity analysis and iterative prune cycles.
//!
//! Each prunable layer gets a prune count sized so that removing that many
//! channels costs about the same number of FLOPs everywhere; the layers whose
//! single-layer prune hurts validation accuracy least are then pruned.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::engine::{
    apply_plan_weights, capture_point, evaluate_accuracy, forward_capture, CaptureMode, Dataset, WeightStore,
};
use crate::error::{Error, Result};
use crate::metrics::{rank_channels, score_layer, seeded_stream, ChannelScore, Metric, MetricConfig};
use crate::netgraph::{build_plan, pruning_counts, FlossTable, NetworkGraph, PlanEntry, PlanProvenance, PruningPlan};

/// Stream of the run seed used to draw the scoring subsample.
const SUBSAMPLE_STREAM: u64 = 0x5c0e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub k: usize,
    pub metric: Metric,
    pub metric_config: MetricConfig,
    /// Cap on scoring samples, drawn without replacement with `seed`; `None` uses all.
    pub scoring_samples: Option<usize>,
    pub seed: u64,
    pub capture: CaptureMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 2.0,
            k: 1,
            metric: Metric::GSd,
            metric_config: MetricConfig::default(),
            scoring_samples: None,
            seed: 0,
            capture: CaptureMode::Post,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.scoring_samples == Some(0) {
            return Err(Error::Config("scoring sample count must be at least 1".into()));
        }
        self.metric_config.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub layer_id: String,
    pub n_channels: usize,
    pub floss: u64,
    /// Validation accuracy with only this layer pruned.
    pub acc: f64,
    /// Exact FLOPs removed by this layer's single-layer prune.
    pub flop_reduction: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub config: RunConfig,
    pub baseline_acc: f64,
    pub total_flops: u64,
    pub table: FlossTable,
    /// Accuracy descending; ties keep graph order.
    pub rows: Vec<SensitivityRow>,
    /// Layers whose prune count rounded to 0.
    pub excluded: Vec<String>,
    /// Channel indices per evaluated layer, lowest score first.
    pub rankings: BTreeMap<String, Vec<usize>>,
}

impl SensitivityReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report JSON is always serializable")
    }
}

/// Samples used for scoring: all of them, or a seeded subset in original order.
pub fn scoring_subset(scoring: &Dataset, cap: Option<usize>, seed: u64) -> Result<Dataset> {
    match cap {
        Some(m) if m < scoring.len() => {
            let mut idx = index::sample(&mut seeded_stream(seed, SUBSAMPLE_STREAM), scoring.len(), m).into_vec();
            idx.sort_unstable();
            scoring.subset(&idx)
        }
        _ => Ok(scoring.clone()),
    }
}

/// Channel scores for each listed layer, captured in one forward pass.
pub fn score_layers(
    graph: &NetworkGraph,
    weights: &WeightStore,
    scoring: &Dataset,
    layer_ids: &[String],
    metric: Metric,
    metric_config: &MetricConfig,
    capture: CaptureMode,
) -> Result<BTreeMap<String, Vec<ChannelScore>>> {
    let points = layer_ids
        .iter()
        .map(|id| capture_point(graph, id, capture))
        .collect::<Result<Vec<_>>>()?;
    let (_, captured) = forward_capture(graph, weights, scoring.inputs(), &points, &BTreeMap::new())?;
    let classes = scoring.labels().inferred_classes();
    let mut out = BTreeMap::new();
    for (id, acts) in layer_ids.iter().zip(&captured) {
        let scores = score_layer(acts, scoring.labels(), classes, id, metric, metric_config)?;
        out.insert(id.clone(), scores);
    }
    Ok(out)
}

fn rank_all(scores: &[ChannelScore]) -> Result<Vec<usize>> {
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    rank_channels(&values, values.len())
}

fn single_layer_plan(
    graph: &NetworkGraph,
    layer_id: &str,
    ranking: &[usize],
    n: usize,
    metric: Metric,
) -> Result<PruningPlan> {
    let entry = PlanEntry { layer: layer_id.to_string(), channels: ranking[..n].to_vec() };
    PruningPlan::new(graph, metric, PlanProvenance::default(), vec![entry])
}

fn sensitivity_with_counts(
    graph: &NetworkGraph,
    weights: &WeightStore,
    validation: &Dataset,
    scoring: &Dataset,
    cfg: &RunConfig,
    table: FlossTable,
) -> Result<SensitivityReport> {
    cfg.validate()?;
    weights.check(graph)?;
    if validation.is_empty() || scoring.is_empty() {
        return Err(Error::Shape("validation and scoring sets must be nonempty".into()));
    }
    let baseline_acc = evaluate_accuracy(graph, weights, validation)?;
    let scoring = scoring_subset(scoring, cfg.scoring_samples, cfg.seed)?;

    let (eval, zero): (Vec<_>, Vec<_>) = table.entries.iter().partition(|e| e.n_channels >= 1);
    let ids: Vec<String> = eval.iter().map(|e| e.layer_id.clone()).collect();
    let excluded: Vec<String> = zero.iter().map(|e| e.layer_id.clone()).collect();
    let scores = score_layers(graph, weights, &scoring, &ids, cfg.metric, &cfg.metric_config, cfg.capture)?;

    let mut rows = Vec::with_capacity(eval.len());
    let mut rankings = BTreeMap::new();
    for entry in eval {
        let id = &entry.layer_id;
        let ranking = rank_all(&scores[id]).map_err(|e| e.in_layer(id))?;
        let plan = single_layer_plan(graph, id, &ranking, entry.n_channels, cfg.metric).map_err(|e| e.in_layer(id))?;
        let (g, w) = apply_plan_weights(graph, weights, &plan).map_err(|e| e.in_layer(id))?;
        let acc = evaluate_accuracy(&g, &w, validation).map_err(|e| e.in_layer(id))?;
        rows.push(SensitivityRow {
            layer_id: id.clone(),
            n_channels: entry.n_channels,
            floss: entry.floss,
            acc,
            flop_reduction: plan.expected_flop_delta,
        });
        rankings.insert(id.clone(), ranking);
    }
    // Stable sort keeps graph order among equal accuracies.
    rows.sort_by(|a, b| b.acc.total_cmp(&a.acc));
    Ok(SensitivityReport {
        config: cfg.clone(),
        baseline_acc,
        total_flops: graph.flop_count(),
        excluded,
        table,
        rows,
        rankings,
    })
}

/// Scores every prunable layer, prunes each alone by its FLOP-normalized
/// count, and ranks layers by the resulting validation accuracy.
pub fn analyze(
    graph: &NetworkGraph,
    weights: &WeightStore,
    validation: &Dataset,
    scoring: &Dataset,
    cfg: &RunConfig,
) -> Result<SensitivityReport> {
    cfg.validate()?;
    let table = pruning_counts(graph, cfg.alpha)?;
    sensitivity_with_counts(graph, weights, validation, scoring, cfg, table)
}

/// Comparison baseline: every layer prunes the same fraction `ratio` of its
/// channels (floored) instead of a FLOP-normalized count.
pub fn analyze_ratio_baseline(
    graph: &NetworkGraph,
    weights: &WeightStore,
    validation: &Dataset,
    scoring: &Dataset,
    cfg: &RunConfig,
    ratio: f64,
) -> Result<SensitivityReport> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("ratio must be in (0, 1), got {ratio}")));
    }
    let mut table = pruning_counts(graph, cfg.alpha)?;
    for e in &mut table.entries {
        e.n_channels = ((ratio * e.channels as f64).floor() as usize).min(e.channels - 1);
    }
    sensitivity_with_counts(graph, weights, validation, scoring, cfg, table)
}

/// Plan pruning the `k` least sensitive layers of the report.
pub fn select_and_plan(graph: &NetworkGraph, report: &SensitivityReport, k: usize) -> Result<PruningPlan> {
    if k == 0 || k > report.rows.len() {
        return Err(Error::Config(format!(
            "k = {k} but {} layer(s) are eligible for pruning",
            report.rows.len()
        )));
    }
    let selected: Vec<String> = report.rows[..k].iter().map(|r| r.layer_id.clone()).collect();
    let cfg = &report.config;
    let provenance = PlanProvenance {
        alpha: Some(cfg.alpha),
        k: Some(k),
        scoring_samples: cfg.scoring_samples,
    };
    build_plan(graph, &report.table, &report.rankings, &selected, cfg.metric, provenance)
}

#[derive(Debug, Clone)]
pub struct Cycle {
    pub report: SensitivityReport,
    pub plan: PruningPlan,
    pub graph: NetworkGraph,
    pub weights: WeightStore,
}

/// Completed cycles and, if one failed, the error that stopped iteration.
#[derive(Debug)]
pub struct IterateOutcome {
    pub cycles: Vec<Cycle>,
    pub error: Option<Error>,
}

/// Repeats analyze, select and prune `cycles` times, re-scoring the current
/// model each time. There is no retraining between cycles.
pub fn iterate(
    graph: &NetworkGraph,
    weights: &WeightStore,
    validation: &Dataset,
    scoring: &Dataset,
    cfg: &RunConfig,
    cycles: usize,
) -> Result<IterateOutcome> {
    if cycles == 0 {
        return Err(Error::Config("cycles must be at least 1".into()));
    }
    cfg.validate()?;
    let mut done: Vec<Cycle> = Vec::with_capacity(cycles);
    for _ in 0..cycles {
        let (g, w) = match done.last() {
            Some(c) => (&c.graph, &c.weights),
            None => (graph, weights),
        };
        let step = analyze(g, w, validation, scoring, cfg).and_then(|report| {
            let plan = select_and_plan(g, &report, cfg.k)?;
            let (g2, w2) = apply_plan_weights(g, w, &plan)?;
            Ok(Cycle { report, plan, graph: g2, weights: w2 })
        });
        match step {
            Ok(c) => done.push(c),
            Err(e) => return Ok(IterateOutcome { cycles: done, error: Some(e) }),
        }
    }
    Ok(IterateOutcome { cycles: done, error: None })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformPoint {
    pub metric: Metric,
    pub ratio_percent: f64,
    pub removed_channels: usize,
    pub flops: u64,
    pub accuracy: f64,
}

/// One-shot pruning of `floor(r% * C)` lowest-scored channels in every
/// prunable layer (at least one kept), scored on the unpruned model.
#[allow(clippy::too_many_arguments)]
pub fn uniform_prune(
    graph: &NetworkGraph,
    weights: &WeightStore,
    validation: &Dataset,
    scoring: &Dataset,
    metric: Metric,
    metric_config: &MetricConfig,
    capture: CaptureMode,
    ratio_percent: f64,
) -> Result<(UniformPoint, PruningPlan, NetworkGraph, WeightStore)> {
    let scores = uniform_scores(graph, weights, scoring, metric, metric_config, capture)?;
    uniform_prune_with_scores(graph, weights, validation, metric, &scores, ratio_percent)
}

/// Scores for [`uniform_prune_with_scores`], so a ratio sweep scores once.
pub fn uniform_scores(
    graph: &NetworkGraph,
    weights: &WeightStore,
    scoring: &Dataset,
    metric: Metric,
    metric_config: &MetricConfig,
    capture: CaptureMode,
) -> Result<BTreeMap<String, Vec<ChannelScore>>> {
    let ids: Vec<String> = graph
        .prunable_layers()
        .into_iter()
        .map(|i| graph.layer(i).id.clone())
        .collect();
    if ids.is_empty() {
        return Err(Error::Graph("graph has no prunable layers".into()));
    }
    score_layers(graph, weights, scoring, &ids, metric, metric_config, capture)
}

pub fn uniform_prune_with_scores(
    graph: &NetworkGraph,
    weights: &WeightStore,
    validation: &Dataset,
    metric: Metric,
    scores: &BTreeMap<String, Vec<ChannelScore>>,
    ratio_percent: f64,
) -> Result<(UniformPoint, PruningPlan, NetworkGraph, WeightStore)> {
    if !(ratio_percent > 0.0 && ratio_percent < 100.0) {
        return Err(Error::Config(format!("ratio must be in (0, 100), got {ratio_percent}")));
    }
    let mut entries = Vec::new();
    for (id, layer_scores) in scores {
        let c = layer_scores.len();
        let n = ((ratio_percent / 100.0 * c as f64).floor() as usize).min(c.saturating_sub(1));
        if n == 0 {
            continue;
        }
        let ranking = rank_all(layer_scores)?;
        entries.push(PlanEntry { layer: id.clone(), channels: ranking[..n].to_vec() });
    }
    let plan = PruningPlan::new(graph, metric, PlanProvenance::default(), entries)?;
    let (g, w) = apply_plan_weights(graph, weights, &plan)?;
    let accuracy = evaluate_accuracy(&g, &w, validation)?;
    let point = UniformPoint {
        metric,
        ratio_percent,
        removed_channels: plan.removed_channels(),
        flops: g.flop_count(),
        accuracy,
    };
    Ok((point, plan, g, w))
}
