//! FLOP and parameter accounting (1 multiply-accumulate = 1 FLOP).

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::edit::ChannelEdit;
use super::{LayerKind, NetworkGraph};
use crate::error::{Error, Result};

pub(crate) fn layer_flops(graph: &NetworkGraph, idx: usize) -> u64 {
    let out = graph.output_shape_of(idx);
    match graph.layer(idx).kind {
        LayerKind::Conv2d { in_ch, out_ch, kernel, .. } => {
            (out_ch * in_ch * kernel * kernel) as u64 * (out.w * out.h) as u64
        }
        LayerKind::Dense { in_dim, out_dim } => (in_dim * out_dim) as u64,
        _ => 0,
    }
}

pub(crate) fn layer_params(graph: &NetworkGraph, idx: usize) -> u64 {
    match graph.layer(idx).kind {
        LayerKind::Conv2d { in_ch, out_ch, kernel, .. } => (out_ch * (in_ch * kernel * kernel + 1)) as u64,
        LayerKind::Dense { in_dim, out_dim } => (out_dim * (in_dim + 1)) as u64,
        LayerKind::BatchNorm { channels } => 2 * channels as u64,
        _ => 0,
    }
}

pub(crate) fn flop_count(graph: &NetworkGraph) -> u64 {
    (0..graph.len()).map(|i| layer_flops(graph, i)).sum()
}

pub(crate) fn param_count(graph: &NetworkGraph) -> u64 {
    (0..graph.len()).map(|i| layer_params(graph, i)).sum()
}

/// Total FLOPs lost by removing one output channel of `layer_id`,
/// measured by rebuilding the graph without it.
pub fn floss(graph: &NetworkGraph, layer_id: &str) -> Result<u64> {
    let idx = graph.index_of(layer_id)?;
    floss_at(graph, idx)
}

fn floss_at(graph: &NetworkGraph, idx: usize) -> Result<u64> {
    let spec = graph.layer(idx);
    if !spec.prunable {
        return Err(Error::Graph(format!("layer {:?} is not prunable", spec.id)));
    }
    let width = graph.output_shape_of(idx).c;
    if width < 2 {
        return Err(Error::Graph(format!(
            "layer {:?} has {width} channel(s); at least 2 are needed to prune one",
            spec.id
        )));
    }
    let mut edit = ChannelEdit::default();
    edit.remove_outputs(graph, idx, &BTreeSet::from([width - 1]))?;
    let smaller = edit.apply(graph)?;
    let loss = graph.flop_count() - smaller.flop_count();
    if loss == 0 {
        return Err(Error::Graph(format!("removing a channel of {:?} saves no FLOPs", spec.id)));
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlossEntry {
    pub layer_id: String,
    pub channels: usize,
    pub floss: u64,
    pub n_channels: usize,
}

/// FLOSS and FLOP-normalized prune counts for every prunable layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlossTable {
    pub alpha: f64,
    pub floss_max: u64,
    /// In graph order.
    pub entries: Vec<FlossEntry>,
    /// Prunable layers left out because they have fewer than 2 channels.
    pub too_narrow: Vec<String>,
}

impl FlossTable {
    pub fn get(&self, layer_id: &str) -> Option<&FlossEntry> {
        self.entries.iter().find(|e| e.layer_id == layer_id)
    }
}

/// `n = round(alpha * FLOSS_max / FLOSS)`, half away from zero, clamped to `[0, C - 1]`.
pub fn pruning_counts(graph: &NetworkGraph, alpha: f64) -> Result<FlossTable> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    let (wide, narrow): (Vec<usize>, Vec<usize>) = graph
        .prunable_layers()
        .into_iter()
        .partition(|&i| graph.output_shape_of(i).c >= 2);
    if wide.is_empty() {
        return Err(Error::Graph("graph has no prunable layer with at least 2 channels".into()));
    }
    let losses = wide
        .par_iter()
        .map(|&i| floss_at(graph, i))
        .collect::<Result<Vec<u64>>>()?;
    let floss_max = *losses.iter().max().unwrap();
    let entries = wide
        .iter()
        .zip(&losses)
        .map(|(&i, &loss)| {
            let channels = graph.output_shape_of(i).c;
            let n = (alpha * floss_max as f64 / loss as f64).round();
            FlossEntry {
                layer_id: graph.layer(i).id.clone(),
                channels,
                floss: loss,
                n_channels: (n as usize).min(channels - 1),
            }
        })
        .collect();
    Ok(FlossTable {
        alpha,
        floss_max,
        entries,
        too_narrow: narrow.into_iter().map(|i| graph.layer(i).id.clone()).collect(),
    })
}
