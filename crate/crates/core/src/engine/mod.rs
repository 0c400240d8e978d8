//! Deterministic single-precision inference over a [`NetworkGraph`].
//!
//! Samples are independent: a batch is split across the rayon pool one
//! sample per task, and every kernel has a fixed summation order, so outputs
//! do not depend on the thread count.

mod ops;
mod weights;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

pub use weights::{apply_plan_weights, LayerWeights, WeightStore, BATCHNORM_EPS, MANIFEST_VERSION};

use crate::error::{Error, Result};
use crate::netgraph::{LayerKind, NetworkGraph, Node, Shape, INPUT_ID};
use crate::tensorstore::{LabelFile, Tensor};

/// Inputs `[N, C, W, H]` with one label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: LabelFile,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: LabelFile) -> Result<Self> {
        if inputs.dims().len() != 4 {
            return Err(Error::Shape(format!("dataset inputs must be [N, C, W, H], got {:?}", inputs.dims())));
        }
        let n = inputs.dims()[0];
        if labels.len() != n {
            return Err(Error::Labels(format!("{} labels for {n} samples", labels.len())));
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn load(inputs: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        Dataset::new(Tensor::load(inputs)?, LabelFile::load(labels)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &LabelFile {
        &self.labels
    }

    pub fn sample_shape(&self) -> Shape {
        let d = self.inputs.dims();
        Shape::new(d[1], d[2], d[3])
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let m = self.sample_shape().len();
        let mut data = Vec::with_capacity(indices.len() * m);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!("sample {i} out of range for {} samples", self.len())));
            }
            data.extend_from_slice(&self.inputs.data()[i * m..(i + 1) * m]);
            labels.push(self.labels.labels[i]);
        }
        let mut dims = self.inputs.dims().to_vec();
        dims[0] = indices.len();
        Dataset::new(Tensor::new(dims, data)?, LabelFile::new(labels))
    }
}

/// Which tensor stands for a layer's channels when capturing activations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptureMode {
    /// The layer's own output.
    Pre,
    /// The relu that follows the layer (through any batchnorm), if there is one.
    #[default]
    Post,
}

impl fmt::Display for CaptureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaptureMode::Pre => "pre",
            CaptureMode::Post => "post",
        })
    }
}

impl FromStr for CaptureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" => Ok(CaptureMode::Pre),
            "post" => Ok(CaptureMode::Post),
            _ => Err(Error::Config(format!("capture mode must be pre or post, got {s:?}"))),
        }
    }
}

/// Layer whose output is captured for `layer_id`; `None` means the input.
pub fn capture_point(graph: &NetworkGraph, layer_id: &str, mode: CaptureMode) -> Result<Option<usize>> {
    if layer_id == INPUT_ID {
        return Ok(None);
    }
    let idx = graph.index_of(layer_id)?;
    if mode == CaptureMode::Pre {
        return Ok(Some(idx));
    }
    let mut cur = idx;
    while let [next] = graph.consumers(cur) {
        match graph.layer(*next).kind {
            LayerKind::BatchNorm { .. } => cur = *next,
            LayerKind::Relu => return Ok(Some(*next)),
            _ => break,
        }
    }
    Ok(Some(idx))
}

enum Op<'a> {
    Conv {
        weight: &'a [f32],
        bias: &'a [f32],
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        weight: &'a [f32],
        bias: &'a [f32],
    },
    Norm {
        a: Vec<f32>,
        b: Vec<f32>,
    },
    Relu,
    MaxPool(usize, usize, usize),
    AvgPool(usize, usize, usize),
    Add,
    Select(&'a [usize]),
    Flatten,
    Softmax,
}

struct Program<'a> {
    graph: &'a NetworkGraph,
    ops: Vec<Op<'a>>,
    last_use: Vec<usize>,
    keep: Vec<bool>,
    masks: Vec<Option<&'a BTreeSet<usize>>>,
}

impl<'a> Program<'a> {
    fn new(
        graph: &'a NetworkGraph,
        weights: &'a WeightStore,
        keep_ids: &[usize],
        masks: &'a BTreeMap<String, BTreeSet<usize>>,
    ) -> Result<Self> {
        weights.check(graph)?;
        let mut ops = Vec::with_capacity(graph.len());
        for spec in graph.layers() {
            let w = weights.get(&spec.id);
            let op = match (&spec.kind, w) {
                (LayerKind::Conv2d { kernel, stride, padding, .. }, Some(LayerWeights::Conv { weight, bias })) => Op::Conv {
                    weight: weight.data(),
                    bias: bias.data(),
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                },
                (LayerKind::Dense { .. }, Some(LayerWeights::Dense { weight, bias })) => Op::Dense {
                    weight: weight.data(),
                    bias: bias.data(),
                },
                (
                    LayerKind::BatchNorm { .. },
                    Some(LayerWeights::BatchNorm { scale, shift, running_mean, running_var }),
                ) => {
                    let mut a = Vec::with_capacity(scale.len());
                    let mut b = Vec::with_capacity(scale.len());
                    for c in 0..scale.len() {
                        let inv = 1.0 / (running_var.data()[c] as f64 + BATCHNORM_EPS).sqrt();
                        let ac = scale.data()[c] as f64 * inv;
                        a.push(ac as f32);
                        b.push((shift.data()[c] as f64 - running_mean.data()[c] as f64 * ac) as f32);
                    }
                    Op::Norm { a, b }
                }
                (LayerKind::Relu, _) => Op::Relu,
                (LayerKind::MaxPool { window, stride, padding }, _) => Op::MaxPool(*window, *stride, *padding),
                (LayerKind::AvgPool { window, stride, padding }, _) => Op::AvgPool(*window, *stride, *padding),
                (LayerKind::Add, _) => Op::Add,
                (LayerKind::ChannelSelect { kept }, _) => Op::Select(kept),
                (LayerKind::Flatten, _) => Op::Flatten,
                (LayerKind::Softmax, _) => Op::Softmax,
                _ => return Err(Error::Weights(format!("layer {:?}: weights do not match kind", spec.id))),
            };
            ops.push(op);
        }
        let mut last_use: Vec<usize> = (0..graph.len()).collect();
        for i in 0..graph.len() {
            for p in graph.producers(i) {
                if let Node::Layer(j) = *p {
                    last_use[j] = last_use[j].max(i);
                }
            }
        }
        let mut keep = vec![false; graph.len()];
        for &k in keep_ids {
            keep[k] = true;
        }
        if let Some(last) = keep.last_mut() {
            *last = true;
        }
        let mut mask_vec = vec![None; graph.len()];
        for (id, set) in masks {
            let idx = graph.index_of(id)?;
            let c = graph.output_shape_of(idx).c;
            if let Some(&bad) = set.iter().find(|&&ch| ch >= c) {
                return Err(Error::Shape(format!("mask channel {bad} out of range for layer {id:?}")));
            }
            mask_vec[idx] = Some(set);
        }
        Ok(Program { graph, ops, last_use, keep, masks: mask_vec })
    }

    fn run(&self, input: &[f32]) -> Vec<Option<Vec<f32>>> {
        let g = self.graph;
        let mut bufs: Vec<Option<Vec<f32>>> = vec![None; g.len()];
        for i in 0..g.len() {
            let prods = g.producers(i);
            let s = g.input_shape_of(i);
            let out = g.output_shape_of(i);
            // Owned copy of operand `k`, moved out when nothing else reads it.
            let owned = |bufs: &mut Vec<Option<Vec<f32>>>, k: usize| -> Vec<f32> {
                match prods[k] {
                    Node::Input => input.to_vec(),
                    Node::Layer(j) => {
                        let once = prods.iter().filter(|&&p| p == prods[k]).count() == 1;
                        if once && self.last_use[j] == i && !self.keep[j] {
                            bufs[j].take().expect("producer computed")
                        } else {
                            bufs[j].clone().expect("producer computed")
                        }
                    }
                }
            };
            let mut y = match &self.ops[i] {
                Op::Conv { weight, bias, kernel, stride, padding } => {
                    let x = with_operand(&bufs, prods[0], input);
                    ops::conv2d(x, s, weight, bias, *kernel, *stride, *padding, out)
                }
                Op::Dense { weight, bias } => {
                    let x = with_operand(&bufs, prods[0], input);
                    ops::dense(x, weight, bias)
                }
                Op::MaxPool(w, st, p) => ops::maxpool(with_operand(&bufs, prods[0], input), s, *w, *st, *p, out),
                Op::AvgPool(w, st, p) => ops::avgpool(with_operand(&bufs, prods[0], input), s, *w, *st, *p, out),
                Op::Select(kept) => {
                    let x = with_operand(&bufs, prods[0], input);
                    let plane = s.spatial();
                    let mut y = Vec::with_capacity(out.len());
                    for &c in kept.iter() {
                        y.extend_from_slice(&x[c * plane..(c + 1) * plane]);
                    }
                    y
                }
                Op::Norm { a, b } => {
                    let mut x = owned(&mut bufs, 0);
                    ops::affine_per_channel(&mut x, s, a, b);
                    x
                }
                Op::Relu => {
                    let mut x = owned(&mut bufs, 0);
                    ops::relu(&mut x);
                    x
                }
                Op::Softmax => {
                    let mut x = owned(&mut bufs, 0);
                    ops::softmax(&mut x, s);
                    x
                }
                Op::Flatten => owned(&mut bufs, 0),
                Op::Add => {
                    let mut x = owned(&mut bufs, 0);
                    let rhs = with_operand(&bufs, prods[1], input);
                    for (a, b) in x.iter_mut().zip(rhs) {
                        *a += b;
                    }
                    x
                }
            };
            if let Some(mask) = self.masks[i] {
                let plane = out.spatial();
                for &c in mask {
                    y[c * plane..(c + 1) * plane].fill(0.0);
                }
            }
            bufs[i] = Some(y);
            for p in prods {
                if let Node::Layer(j) = *p {
                    if self.last_use[j] == i && !self.keep[j] {
                        bufs[j] = None;
                    }
                }
            }
        }
        bufs
    }
}

fn with_operand<'b>(bufs: &'b [Option<Vec<f32>>], node: Node, input: &'b [f32]) -> &'b [f32] {
    match node {
        Node::Input => input,
        Node::Layer(j) => bufs[j].as_deref().expect("producer computed"),
    }
}

fn check_batch(graph: &NetworkGraph, batch: &Tensor) -> Result<usize> {
    let s = graph.input_shape();
    let d = batch.dims();
    if d.len() != 4 || d[1..] != [s.c, s.w, s.h] {
        return Err(Error::Shape(format!(
            "batch dims {d:?} do not match network input [N, {}, {}, {}]",
            s.c, s.w, s.h
        )));
    }
    Ok(d[0])
}

fn stack(n: usize, shape: Shape, parts: impl Iterator<Item = Vec<f32>>) -> Tensor {
    let mut data = Vec::with_capacity(n * shape.len());
    for p in parts {
        data.extend(p);
    }
    Tensor::from_parts(vec![n, shape.c, shape.w, shape.h], data)
}

/// Runs the batch and returns the final output plus the outputs of the
/// requested layers (`None` = the input itself), each `[N, C, W, H]`.
pub fn forward_capture(
    graph: &NetworkGraph,
    weights: &WeightStore,
    batch: &Tensor,
    capture: &[Option<usize>],
    masks: &BTreeMap<String, BTreeSet<usize>>,
) -> Result<(Tensor, Vec<Tensor>)> {
    let n = check_batch(graph, batch)?;
    let keep: Vec<usize> = capture.iter().flatten().copied().collect();
    let program = Program::new(graph, weights, &keep, masks)?;
    let m = graph.input_shape().len();
    let mut results: Vec<Vec<Option<Vec<f32>>>> = (0..n)
        .into_par_iter()
        .map(|i| program.run(&batch.data()[i * m..(i + 1) * m]))
        .collect();
    let out_shape = graph.output_shape();
    let captured = capture
        .iter()
        .map(|c| match c {
            None => batch.clone(),
            Some(j) => stack(
                n,
                graph.output_shape_of(*j),
                results.iter().map(|r| r[*j].clone().expect("kept")),
            ),
        })
        .collect();
    let output = if graph.is_empty() {
        batch.clone()
    } else {
        let last = graph.len() - 1;
        stack(n, out_shape, results.iter_mut().map(|r| r[last].take().expect("kept")))
    };
    for (i, v) in output.data().iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite network output at flat index {i}")));
        }
    }
    Ok((output, captured))
}

pub fn forward(graph: &NetworkGraph, weights: &WeightStore, batch: &Tensor) -> Result<Tensor> {
    forward_capture(graph, weights, batch, &[], &BTreeMap::new()).map(|(out, _)| out)
}

/// Forward pass with the listed output channels of the named layers forced to zero.
pub fn forward_masked(
    graph: &NetworkGraph,
    weights: &WeightStore,
    batch: &Tensor,
    masks: &BTreeMap<String, BTreeSet<usize>>,
) -> Result<Tensor> {
    forward_capture(graph, weights, batch, &[], masks).map(|(out, _)| out)
}

/// Activations standing for `layer_id` over the whole dataset, `[N, C, W, H]`.
pub fn capture_activations(
    graph: &NetworkGraph,
    weights: &WeightStore,
    dataset: &Dataset,
    layer_id: &str,
    mode: CaptureMode,
) -> Result<Tensor> {
    let point = capture_point(graph, layer_id, mode)?;
    forward_capture(graph, weights, dataset.inputs(), &[point], &BTreeMap::new())
        .map(|(_, mut c)| c.remove(0))
        .map_err(|e| e.in_layer(layer_id))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(graph: &NetworkGraph, weights: &WeightStore, batch: &Tensor) -> Result<Vec<usize>> {
    let out = forward(graph, weights, batch)?;
    let n = out.dims()[0];
    let per = out.len() / n;
    Ok((0..n).map(|i| argmax(&out.data()[i * per..(i + 1) * per])).collect())
}

/// Top-1 accuracy of argmax predictions.
pub fn evaluate_accuracy(graph: &NetworkGraph, weights: &WeightStore, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Shape("cannot evaluate on an empty dataset".into()));
    }
    let pred = predict(graph, weights, dataset.inputs())?;
    let hits = pred
        .iter()
        .zip(&dataset.labels().labels)
        .filter(|(&p, &l)| p == l as usize)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}
