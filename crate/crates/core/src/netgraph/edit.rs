//! Propagation of output-channel removals to everything that reads them.

use std::collections::{BTreeMap, BTreeSet};

use super::{LayerKind, LayerSpec, NetworkGraph};
use crate::error::{Error, Result};

/// Index sets to delete, keyed by layer index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct ChannelEdit {
    /// Output channels of conv/dense layers, or kept-list positions of channel_select.
    pub outputs: BTreeMap<usize, BTreeSet<usize>>,
    /// Input channels (conv) or input features (dense).
    pub inputs: BTreeMap<usize, BTreeSet<usize>>,
    /// Batchnorm channels.
    pub per_channel: BTreeMap<usize, BTreeSet<usize>>,
}

impl ChannelEdit {
    /// Marks `removed` output channels of `layer` and follows them downstream.
    pub fn remove_outputs(&mut self, graph: &NetworkGraph, layer: usize, removed: &BTreeSet<usize>) -> Result<()> {
        let spec = graph.layer(layer);
        if !spec.kind.can_prune() {
            return Err(Error::Plan(format!(
                "layer {:?} is a {} layer; only conv2d, dense and channel_select outputs can be removed",
                spec.id,
                spec.kind.name()
            )));
        }
        let width = graph.output_shape_of(layer).c;
        if let Some(&bad) = removed.iter().find(|&&c| c >= width) {
            return Err(Error::Plan(format!(
                "channel {bad} out of range for layer {:?} with {width} channels",
                spec.id
            )));
        }
        let set = self.outputs.entry(layer).or_default();
        set.extend(removed.iter().copied());
        if set.len() >= width {
            return Err(Error::Plan(format!(
                "removing {} of {width} channels would empty layer {:?}",
                set.len(),
                spec.id
            )));
        }
        follow(graph, layer, layer, removed, self)
    }

    /// Rebuilds the graph with every recorded removal applied.
    pub fn apply(&self, graph: &NetworkGraph) -> Result<NetworkGraph> {
        let count = |m: &BTreeMap<usize, BTreeSet<usize>>, i: usize| m.get(&i).map_or(0, BTreeSet::len);
        let layers: Vec<LayerSpec> = graph
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let kind = match &l.kind {
                    LayerKind::Conv2d { in_ch, out_ch, kernel, stride, padding } => LayerKind::Conv2d {
                        in_ch: in_ch - count(&self.inputs, i),
                        out_ch: out_ch - count(&self.outputs, i),
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                    },
                    LayerKind::Dense { in_dim, out_dim } => LayerKind::Dense {
                        in_dim: in_dim - count(&self.inputs, i),
                        out_dim: out_dim - count(&self.outputs, i),
                    },
                    LayerKind::BatchNorm { channels } => LayerKind::BatchNorm {
                        channels: channels - count(&self.per_channel, i),
                    },
                    LayerKind::ChannelSelect { kept } => {
                        let gone = self.outputs.get(&i);
                        LayerKind::ChannelSelect {
                            kept: kept
                                .iter()
                                .enumerate()
                                .filter(|(pos, _)| !gone.is_some_and(|g| g.contains(pos)))
                                .map(|(_, &k)| k)
                                .collect(),
                        }
                    }
                    other => other.clone(),
                };
                LayerSpec { kind, ..l.clone() }
            })
            .collect();
        NetworkGraph::new(graph.input_shape(), layers)
    }
}

/// Follows channels `removed` of `from`'s output through its consumers.
fn follow(
    graph: &NetworkGraph,
    origin: usize,
    from: usize,
    removed: &BTreeSet<usize>,
    edit: &mut ChannelEdit,
) -> Result<()> {
    for &next in graph.consumers(from) {
        let reject = |what: &str| {
            Error::Graph(format!(
                "channels of {:?} reach {what} {:?}; removing them would break its operand widths",
                graph.layer(origin).id,
                graph.layer(next).id
            ))
        };
        match &graph.layer(next).kind {
            LayerKind::Conv2d { .. } | LayerKind::Dense { .. } => {
                edit.inputs.entry(next).or_default().extend(removed.iter().copied());
            }
            LayerKind::BatchNorm { .. } => {
                edit.per_channel.entry(next).or_default().extend(removed.iter().copied());
                follow(graph, origin, next, removed, edit)?;
            }
            LayerKind::Relu | LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. } => {
                follow(graph, origin, next, removed, edit)?;
            }
            LayerKind::Flatten => {
                let plane = graph.input_shape_of(next).spatial();
                let features = removed
                    .iter()
                    .flat_map(|&c| c * plane..(c + 1) * plane)
                    .collect();
                follow(graph, origin, next, &features, edit)?;
            }
            LayerKind::Add => return Err(reject("residual add")),
            LayerKind::ChannelSelect { .. } => return Err(reject("channel_select")),
            LayerKind::Softmax => return Err(reject("softmax")),
        }
    }
    Ok(())
}

/// Confirms that removing any output channel of `layer` leaves a valid graph.
pub(crate) fn check_prunable(graph: &NetworkGraph, layer: usize) -> Result<()> {
    let mut edit = ChannelEdit::default();
    follow(graph, layer, layer, &BTreeSet::from([0]), &mut edit)
}
