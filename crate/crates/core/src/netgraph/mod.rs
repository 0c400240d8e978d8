//! Layer/edge IR of a CNN, FLOP and parameter accounting, and pruning plans.
//!
//! A graph is an ordered list of layers, each naming its producers; the
//! reserved id `"input"` is the network input. Layers must be listed in
//! topological order and the last layer is the single output. Every layer's
//! output is a `[C, W, H]` activation; dense layers see `[D, 1, 1]`.

mod edit;
mod flops;
mod plan;
pub mod zoo;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub(crate) use edit::ChannelEdit;
pub use flops::{floss, pruning_counts, FlossEntry, FlossTable};
pub use plan::{apply_plan_graph, build_plan, PlanEntry, PlanProvenance, PruningPlan};

use crate::error::{Error, Result};

/// Id under which layers refer to the network input.
pub const INPUT_ID: &str = "input";
pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub w: usize,
    pub h: usize,
}

impl Shape {
    pub fn new(c: usize, w: usize, h: usize) -> Self {
        Shape { c, w, h }
    }

    pub fn len(&self) -> usize {
        self.c * self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> usize {
        self.w * self.h
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Add,
    /// Feeds the listed input channels, in order, to its consumer.
    ChannelSelect {
        kept: Vec<usize>,
    },
    Flatten,
    Softmax,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Add => "add",
            LayerKind::ChannelSelect { .. } => "channel_select",
            LayerKind::Flatten => "flatten",
            LayerKind::Softmax => "softmax",
        }
    }

    /// Kinds whose output channels can be removed by a plan.
    pub fn can_prune(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d { .. } | LayerKind::Dense { .. } | LayerKind::ChannelSelect { .. }
        )
    }

    fn params_json(&self) -> Value {
        match self {
            LayerKind::Conv2d { in_ch, out_ch, kernel, stride, padding } => json!({
                "in_ch": in_ch, "out_ch": out_ch, "kernel": kernel, "stride": stride, "padding": padding
            }),
            LayerKind::Dense { in_dim, out_dim } => json!({ "in_dim": in_dim, "out_dim": out_dim }),
            LayerKind::MaxPool { window, stride, padding } | LayerKind::AvgPool { window, stride, padding } => {
                json!({ "window": window, "stride": stride, "padding": padding })
            }
            LayerKind::BatchNorm { channels } => json!({ "channels": channels }),
            LayerKind::ChannelSelect { kept } => json!({ "kept": kept }),
            LayerKind::Relu | LayerKind::Add | LayerKind::Flatten | LayerKind::Softmax => json!({}),
        }
    }

    fn from_json(kind: &str, params: Value) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Conv {
            in_ch: usize,
            out_ch: usize,
            kernel: usize,
            #[serde(default = "one")]
            stride: usize,
            #[serde(default)]
            padding: usize,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Dense {
            in_dim: usize,
            out_dim: usize,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Pool {
            window: usize,
            stride: usize,
            #[serde(default)]
            padding: usize,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Norm {
            channels: usize,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Select {
            kept: Vec<usize>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Empty {}
        fn one() -> usize {
            1
        }

        let params = if params.is_null() { json!({}) } else { params };
        let bad = |e: serde_json::Error| Error::Graph(format!("{kind} params: {e}"));
        Ok(match kind {
            "conv2d" => {
                let p: Conv = serde_json::from_value(params).map_err(bad)?;
                LayerKind::Conv2d {
                    in_ch: p.in_ch,
                    out_ch: p.out_ch,
                    kernel: p.kernel,
                    stride: p.stride,
                    padding: p.padding,
                }
            }
            "dense" => {
                let p: Dense = serde_json::from_value(params).map_err(bad)?;
                LayerKind::Dense { in_dim: p.in_dim, out_dim: p.out_dim }
            }
            "maxpool" | "avgpool" => {
                let p: Pool = serde_json::from_value(params).map_err(bad)?;
                if kind == "maxpool" {
                    LayerKind::MaxPool { window: p.window, stride: p.stride, padding: p.padding }
                } else {
                    LayerKind::AvgPool { window: p.window, stride: p.stride, padding: p.padding }
                }
            }
            "batchnorm" => {
                let p: Norm = serde_json::from_value(params).map_err(bad)?;
                LayerKind::BatchNorm { channels: p.channels }
            }
            "channel_select" => {
                let p: Select = serde_json::from_value(params).map_err(bad)?;
                LayerKind::ChannelSelect { kept: p.kept }
            }
            "relu" | "add" | "flatten" | "softmax" => {
                let _: Empty = serde_json::from_value(params).map_err(bad)?;
                match kind {
                    "relu" => LayerKind::Relu,
                    "add" => LayerKind::Add,
                    "flatten" => LayerKind::Flatten,
                    _ => LayerKind::Softmax,
                }
            }
            other => return Err(Error::Graph(format!("unknown layer kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    pub prunable: bool,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        LayerSpec {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            prunable: false,
        }
    }

    pub fn prunable(mut self, prunable: bool) -> Self {
        self.prunable = prunable;
        self
    }
}

/// Where a layer reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Input,
    Layer(usize),
}

/// A validated network. Immutable: every edit builds a new graph.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    producers: Vec<Vec<Node>>,
    consumers: Vec<Vec<usize>>,
    input_consumers: Vec<usize>,
    shapes: Vec<Shape>,
    index: HashMap<String, usize>,
}

impl PartialEq for NetworkGraph {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

fn pooled(len: usize, window: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    (window >= 1 && stride >= 1 && padded >= window).then(|| (padded - window) / stride + 1)
}

impl NetworkGraph {
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() {
            return Err(Error::Graph(format!("input shape {input_shape:?} has a zero extent")));
        }
        let mut index = HashMap::with_capacity(layers.len());
        let mut producers = Vec::with_capacity(layers.len());
        let mut shapes: Vec<Shape> = Vec::with_capacity(layers.len());
        let mut consumers = vec![Vec::new(); layers.len()];
        let mut input_consumers = Vec::new();

        for (i, layer) in layers.iter().enumerate() {
            let fail = |msg: String| Error::Graph(format!("layer {:?}: {msg}", layer.id));
            if layer.id.is_empty() || layer.id == INPUT_ID {
                return Err(fail("id must be nonempty and not \"input\"".into()));
            }
            if index.insert(layer.id.clone(), i).is_some() {
                return Err(fail("duplicate id".into()));
            }
            let arity = if layer.kind == LayerKind::Add { 2 } else { 1 };
            if layer.inputs.len() != arity {
                return Err(fail(format!(
                    "{} takes {arity} input(s), got {}",
                    layer.kind.name(),
                    layer.inputs.len()
                )));
            }
            let mut prods = Vec::with_capacity(arity);
            for name in &layer.inputs {
                let node = if name == INPUT_ID {
                    input_consumers.push(i);
                    Node::Input
                } else {
                    let &j = index
                        .get(name)
                        .filter(|&&j| j < i)
                        .ok_or_else(|| fail(format!("input {name:?} is not an earlier layer")))?;
                    consumers[j].push(i);
                    Node::Layer(j)
                };
                prods.push(node);
            }
            let in_shape = |n: Node| match n {
                Node::Input => input_shape,
                Node::Layer(j) => shapes[j],
            };
            let s = in_shape(prods[0]);
            let out = match &layer.kind {
                LayerKind::Conv2d { in_ch, out_ch, kernel, stride, padding } => {
                    if *out_ch == 0 || *kernel == 0 || *stride == 0 {
                        return Err(fail("conv2d geometry must be positive".into()));
                    }
                    if s.c != *in_ch {
                        return Err(fail(format!("in_ch {in_ch} but producer has {} channels", s.c)));
                    }
                    let w = pooled(s.w, *kernel, *stride, *padding);
                    let h = pooled(s.h, *kernel, *stride, *padding);
                    match (w, h) {
                        (Some(w), Some(h)) => Shape::new(*out_ch, w, h),
                        _ => return Err(fail(format!("kernel {kernel} larger than padded input {s:?}"))),
                    }
                }
                LayerKind::Dense { in_dim, out_dim } => {
                    if *out_dim == 0 {
                        return Err(fail("dense out_dim must be positive".into()));
                    }
                    if s != Shape::new(*in_dim, 1, 1) {
                        return Err(fail(format!("in_dim {in_dim} but producer shape is {s:?}")));
                    }
                    Shape::new(*out_dim, 1, 1)
                }
                LayerKind::MaxPool { window, stride, padding } | LayerKind::AvgPool { window, stride, padding } => {
                    if *padding >= *window {
                        return Err(fail("pool padding must be smaller than the window".into()));
                    }
                    match (pooled(s.w, *window, *stride, *padding), pooled(s.h, *window, *stride, *padding)) {
                        (Some(w), Some(h)) => Shape::new(s.c, w, h),
                        _ => return Err(fail(format!("invalid pool geometry for input {s:?}"))),
                    }
                }
                LayerKind::BatchNorm { channels } => {
                    if *channels != s.c {
                        return Err(fail(format!("channels {channels} but producer has {}", s.c)));
                    }
                    s
                }
                LayerKind::Add => {
                    let t = in_shape(prods[1]);
                    if s != t {
                        return Err(fail(format!("add operands differ: {s:?} vs {t:?}")));
                    }
                    s
                }
                LayerKind::ChannelSelect { kept } => {
                    if kept.is_empty() {
                        return Err(fail("kept list is empty".into()));
                    }
                    if kept.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(fail("kept list must be strictly increasing".into()));
                    }
                    if *kept.last().unwrap() >= s.c {
                        return Err(fail(format!("kept index out of range for {} channels", s.c)));
                    }
                    Shape::new(kept.len(), s.w, s.h)
                }
                LayerKind::Flatten => Shape::new(s.len(), 1, 1),
                LayerKind::Relu | LayerKind::Softmax => s,
            };
            if layer.prunable && !layer.kind.can_prune() {
                return Err(fail(format!("{} layers cannot be prunable", layer.kind.name())));
            }
            producers.push(prods);
            shapes.push(out);
        }

        if !layers.is_empty() {
            if input_consumers.is_empty() {
                return Err(Error::Graph("no layer reads the input".into()));
            }
            let last = layers.len() - 1;
            if let Some(dangling) = (0..last).find(|&i| consumers[i].is_empty()) {
                return Err(Error::Graph(format!(
                    "layer {:?} has no consumers; the graph must have a single output",
                    layers[dangling].id
                )));
            }
        }

        let graph = NetworkGraph {
            input_shape,
            layers,
            producers,
            consumers,
            input_consumers,
            shapes,
            index,
        };
        for i in 0..graph.layers.len() {
            if graph.layers[i].prunable {
                edit::check_prunable(&graph, i)
                    .map_err(|e| Error::Graph(format!("layer {:?} marked prunable: {e}", graph.layers[i].id)))?;
            }
        }
        Ok(graph)
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, idx: usize) -> &LayerSpec {
        &self.layers[idx]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.find(id)
            .ok_or_else(|| Error::Graph(format!("unknown layer {id:?}")))
    }

    pub fn producers(&self, idx: usize) -> &[Node] {
        &self.producers[idx]
    }

    pub fn consumers(&self, idx: usize) -> &[usize] {
        &self.consumers[idx]
    }

    pub fn input_consumers(&self) -> &[usize] {
        &self.input_consumers
    }

    pub fn output_shape_of(&self, idx: usize) -> Shape {
        self.shapes[idx]
    }

    pub fn node_shape(&self, node: Node) -> Shape {
        match node {
            Node::Input => self.input_shape,
            Node::Layer(j) => self.shapes[j],
        }
    }

    /// Shape of the first (for `add`, either) operand.
    pub fn input_shape_of(&self, idx: usize) -> Shape {
        self.node_shape(self.producers[idx][0])
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes.last().copied().unwrap_or(self.input_shape)
    }

    /// Whether output channels of layer `idx` can be removed without
    /// touching a residual add, a channel_select or a softmax downstream.
    pub fn can_remove_channels(&self, idx: usize) -> bool {
        self.layers[idx].kind.can_prune() && edit::check_prunable(self, idx).is_ok()
    }

    pub fn prunable_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].prunable).collect()
    }

    pub fn to_json_value(&self) -> Value {
        let layers: Vec<Value> = self
            .layers
            .iter()
            .map(|l| {
                json!({
                    "id": l.id,
                    "kind": l.kind.name(),
                    "params": l.kind.params_json(),
                    "inputs": l.inputs,
                    "prunable": l.prunable,
                })
            })
            .collect();
        json!({
            "version": GRAPH_FORMAT_VERSION,
            "input_shape": [self.input_shape.c, self.input_shape.w, self.input_shape.h],
            "layers": layers,
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("graph JSON is always serializable")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct LayerRecord {
            id: String,
            kind: String,
            #[serde(default)]
            params: Value,
            inputs: Vec<String>,
            #[serde(default)]
            prunable: bool,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct GraphRecord {
            version: u32,
            input_shape: [usize; 3],
            layers: Vec<LayerRecord>,
        }
        let rec: GraphRecord = serde_json::from_str(s)?;
        if rec.version != GRAPH_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(rec.version));
        }
        let layers = rec
            .layers
            .into_iter()
            .map(|r| {
                let kind = LayerKind::from_json(&r.kind, r.params)
                    .map_err(|e| Error::Graph(format!("layer {:?}: {e}", r.id)))?;
                Ok(LayerSpec {
                    id: r.id,
                    kind,
                    inputs: r.inputs,
                    prunable: r.prunable,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let [c, w, h] = rec.input_shape;
        NetworkGraph::new(Shape::new(c, w, h), layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NetworkGraph::from_json_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn flop_count(&self) -> u64 {
        flops::flop_count(self)
    }

    pub fn param_count(&self) -> u64 {
        flops::param_count(self)
    }

    pub fn layer_flops(&self, idx: usize) -> u64 {
        flops::layer_flops(self, idx)
    }

    pub fn layer_params(&self, idx: usize) -> u64 {
        flops::layer_params(self, idx)
    }
}
