//! Wall-clock timing of channel scoring per layer and metric.
//!
//! Channels are scored one after another on the calling thread so timings
//! compare metrics, not pool sizes. Only scoring is timed; synthesis and
//! activation capture are not.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::engine::{capture_point, forward_capture, CaptureMode, Dataset, WeightStore};
use crate::error::{Error, Result};
use crate::metrics::{score_channel, Metric, MetricConfig};
use crate::netgraph::NetworkGraph;
use crate::report::BenchRow;
use crate::synth::channel_maps;
use crate::tensorstore::{channel_count, slice_channel, ActivationSet};

/// A synthetic layer of `channels` maps of `width x height` over `samples` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLayer {
    pub layer_id: String,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub samples: usize,
    pub classes: usize,
    pub seed: u64,
}

fn timed(set: &ActivationSet, metric: Metric, cfg: &MetricConfig, layer_id: &str, ch: usize) -> Result<f64> {
    let start = Instant::now();
    let score = score_channel(set, metric, cfg, layer_id, ch)?;
    let secs = start.elapsed().as_secs_f64();
    std::hint::black_box(score);
    Ok(secs)
}

fn cap(channels: usize, max_channels: Option<usize>) -> Result<usize> {
    match max_channels {
        Some(0) => Err(Error::Config("max channels must be at least 1".into())),
        Some(m) => Ok(m.min(channels)),
        None => Ok(channels),
    }
}

/// Times every metric on the first `max_channels` channels of a synthetic
/// layer. Each channel is generated, scored by every metric, then dropped,
/// so memory stays at one channel's maps.
pub fn bench_synthetic(
    layer: &SyntheticLayer,
    metrics: &[Metric],
    cfg: &MetricConfig,
    max_channels: Option<usize>,
) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    if layer.channels == 0 || layer.samples < 2 || layer.classes < 2 {
        return Err(Error::Config(
            "synthetic layer needs channels >= 1, samples >= 2 and classes >= 2".into(),
        ));
    }
    let n = cap(layer.channels, max_channels)?;
    let mut total = vec![0.0; metrics.len()];
    for ch in 0..n {
        let set = channel_maps(
            layer.samples,
            layer.classes,
            layer.width,
            layer.height,
            0.5,
            layer.seed.wrapping_add(ch as u64),
        )?;
        for (t, &m) in total.iter_mut().zip(metrics) {
            *t += timed(&set, m, cfg, &layer.layer_id, ch)?;
        }
    }
    Ok(rows(&layer.layer_id, metrics, total))
}

fn rows(layer_id: &str, metrics: &[Metric], total: Vec<f64>) -> Vec<BenchRow> {
    metrics
        .iter()
        .zip(total)
        .map(|(&metric, wall_seconds)| BenchRow { layer_id: layer_id.to_string(), metric, wall_seconds })
        .collect()
}

/// Times every metric on activations of real layers captured from `data`.
#[allow(clippy::too_many_arguments)]
pub fn bench_layers(
    graph: &NetworkGraph,
    weights: &WeightStore,
    data: &Dataset,
    layer_ids: &[String],
    metrics: &[Metric],
    cfg: &MetricConfig,
    capture: CaptureMode,
    max_channels: Option<usize>,
) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let points = layer_ids
        .iter()
        .map(|id| capture_point(graph, id, capture))
        .collect::<Result<Vec<_>>>()?;
    let (_, captured) = forward_capture(graph, weights, data.inputs(), &points, &BTreeMap::new())?;
    let classes = data.labels().inferred_classes();
    let mut out = Vec::new();
    for (id, acts) in layer_ids.iter().zip(&captured) {
        let n = cap(channel_count(acts)?, max_channels)?;
        let mut total = vec![0.0; metrics.len()];
        for ch in 0..n {
            let set = slice_channel(acts, ch, data.labels(), classes).map_err(|e| e.in_layer(id))?;
            for (t, &m) in total.iter_mut().zip(metrics) {
                *t += timed(&set, m, cfg, id, ch).map_err(|e| e.in_layer(id))?;
            }
        }
        out.extend(rows(id, metrics, total));
    }
    Ok(out)
}
