//! Per-layer parameters, their on-disk manifest, and pruning at the weight level.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::seeded_stream;
use crate::netgraph::{ChannelEdit, LayerKind, NetworkGraph, PruningPlan};
use crate::tensorstore::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    /// `weight` is `[out, in, k, k]`, `bias` is `[out]`.
    Conv { weight: Tensor, bias: Tensor },
    /// `weight` is `[out, in]`, `bias` is `[out]`.
    Dense { weight: Tensor, bias: Tensor },
    BatchNorm {
        scale: Tensor,
        shift: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
    },
}

impl LayerWeights {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            LayerWeights::Conv { weight, bias } | LayerWeights::Dense { weight, bias } => {
                vec![("weight", weight), ("bias", bias)]
            }
            LayerWeights::BatchNorm { scale, shift, running_mean, running_var } => vec![
                ("scale", scale),
                ("shift", shift),
                ("running_mean", running_mean),
                ("running_var", running_var),
            ],
        }
    }
}

/// Expected tensor dims per parameter name for a layer, or `None` for
/// parameter-free kinds.
fn expected(kind: &LayerKind) -> Option<Vec<(&'static str, Vec<usize>)>> {
    match *kind {
        LayerKind::Conv2d { in_ch, out_ch, kernel, .. } => Some(vec![
            ("weight", vec![out_ch, in_ch, kernel, kernel]),
            ("bias", vec![out_ch]),
        ]),
        LayerKind::Dense { in_dim, out_dim } => {
            Some(vec![("weight", vec![out_dim, in_dim]), ("bias", vec![out_dim])])
        }
        LayerKind::BatchNorm { channels } => Some(vec![
            ("scale", vec![channels]),
            ("shift", vec![channels]),
            ("running_mean", vec![channels]),
            ("running_var", vec![channels]),
        ]),
        _ => None,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    layers: BTreeMap<String, BTreeMap<String, String>>,
}

/// Parameters keyed by layer id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    layers: BTreeMap<String, LayerWeights>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer_id: impl Into<String>, weights: LayerWeights) {
        self.layers.insert(layer_id.into(), weights);
    }

    pub fn get(&self, layer_id: &str) -> Option<&LayerWeights> {
        self.layers.get(layer_id)
    }

    pub fn get_mut(&mut self, layer_id: &str) -> Option<&mut LayerWeights> {
        self.layers.get_mut(layer_id)
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    /// Verifies that every parametric layer has weights of exactly the
    /// graph's geometry and that no unknown layer ids are present.
    pub fn check(&self, graph: &NetworkGraph) -> Result<()> {
        let mut wanted = BTreeSet::new();
        for spec in graph.layers() {
            let Some(shapes) = expected(&spec.kind) else { continue };
            wanted.insert(spec.id.as_str());
            let w = self
                .layers
                .get(&spec.id)
                .ok_or_else(|| Error::Weights(format!("missing weights for layer {:?}", spec.id)))?;
            let kind_ok = matches!(
                (&spec.kind, w),
                (LayerKind::Conv2d { .. }, LayerWeights::Conv { .. })
                    | (LayerKind::Dense { .. }, LayerWeights::Dense { .. })
                    | (LayerKind::BatchNorm { .. }, LayerWeights::BatchNorm { .. })
            );
            if !kind_ok {
                return Err(Error::Weights(format!(
                    "layer {:?} is {} but its weights are of another kind",
                    spec.id,
                    spec.kind.name()
                )));
            }
            for ((name, dims), (_, t)) in shapes.iter().zip(w.named()) {
                if t.dims() != dims.as_slice() {
                    return Err(Error::Weights(format!(
                        "layer {:?} {name}: expected dims {dims:?}, got {:?}",
                        spec.id,
                        t.dims()
                    )));
                }
            }
        }
        if let Some(extra) = self.layers.keys().find(|k| !wanted.contains(k.as_str())) {
            return Err(Error::Weights(format!("weights given for unknown or parameter-free layer {extra:?}")));
        }
        Ok(())
    }

    /// He-normal convolution/dense weights, small biases, and batchnorm
    /// statistics near identity; reproducible for a given seed.
    pub fn random(graph: &NetworkGraph, seed: u64) -> Self {
        let mut store = WeightStore::new();
        for (i, spec) in graph.layers().iter().enumerate() {
            let mut rng = seeded_stream(seed, i as u64);
            let mut normal = |n: usize, std: f64| -> Vec<f32> {
                let d = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| d.sample(&mut rng) as f32).collect()
            };
            let w = match spec.kind {
                LayerKind::Conv2d { in_ch, out_ch, kernel, .. } => {
                    let fan_in = in_ch * kernel * kernel;
                    LayerWeights::Conv {
                        weight: Tensor::from_parts(
                            vec![out_ch, in_ch, kernel, kernel],
                            normal(out_ch * fan_in, (2.0 / fan_in as f64).sqrt()),
                        ),
                        bias: Tensor::from_parts(vec![out_ch], normal(out_ch, 0.05)),
                    }
                }
                LayerKind::Dense { in_dim, out_dim } => LayerWeights::Dense {
                    weight: Tensor::from_parts(
                        vec![out_dim, in_dim],
                        normal(out_dim * in_dim, (2.0 / in_dim as f64).sqrt()),
                    ),
                    bias: Tensor::from_parts(vec![out_dim], normal(out_dim, 0.05)),
                },
                LayerKind::BatchNorm { channels } => {
                    let jitter = normal(4 * channels, 0.1);
                    let col = |k: usize, f: fn(f32) -> f32| -> Tensor {
                        Tensor::from_parts(vec![channels], jitter[k * channels..(k + 1) * channels].iter().map(|&v| f(v)).collect())
                    };
                    LayerWeights::BatchNorm {
                        scale: col(0, |v| 1.0 + v),
                        shift: col(1, |v| v),
                        running_mean: col(2, |v| v),
                        running_var: col(3, |v| 1.0 + v.abs()),
                    }
                }
                _ => continue,
            };
            store.insert(spec.id.clone(), w);
        }
        store
    }

    /// Reads a manifest JSON; tensor paths are relative to its directory.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion(manifest.version));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut store = WeightStore::new();
        for (id, files) in manifest.layers {
            let take = |name: &str| -> Result<Tensor> {
                let rel = files
                    .get(name)
                    .ok_or_else(|| Error::Weights(format!("layer {id:?}: manifest lacks {name:?}")))?;
                Tensor::load(base.join(rel))
            };
            let keys: BTreeSet<&str> = files.keys().map(String::as_str).collect();
            let w = if keys == BTreeSet::from(["weight", "bias"]) {
                let weight = take("weight")?;
                let bias = take("bias")?;
                match weight.dims().len() {
                    4 => LayerWeights::Conv { weight, bias },
                    2 => LayerWeights::Dense { weight, bias },
                    _ => {
                        return Err(Error::Weights(format!(
                            "layer {id:?}: weight must be 2-D or 4-D, got {:?}",
                            weight.dims()
                        )))
                    }
                }
            } else if keys == BTreeSet::from(["scale", "shift", "running_mean", "running_var"]) {
                LayerWeights::BatchNorm {
                    scale: take("scale")?,
                    shift: take("shift")?,
                    running_mean: take("running_mean")?,
                    running_var: take("running_var")?,
                }
            } else {
                return Err(Error::Weights(format!("layer {id:?}: unrecognized tensor set {keys:?}")));
            };
            store.insert(id, w);
        }
        Ok(store)
    }

    /// Writes `manifest.json` plus one tensor file per parameter into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layers = BTreeMap::new();
        for (id, w) in &self.layers {
            let mut files = BTreeMap::new();
            for (name, t) in w.named() {
                let file = format!("{id}.{name}.ptsr");
                t.save(dir.join(&file))?;
                files.insert(name.to_string(), file);
            }
            layers.insert(id.clone(), files);
        }
        let manifest = Manifest { version: MANIFEST_VERSION, layers };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Drops entries of `data` along one axis of a row-major tensor.
fn drop_axis(t: &Tensor, axis: usize, gone: &BTreeSet<usize>) -> Tensor {
    if gone.is_empty() {
        return t.clone();
    }
    let dims = t.dims();
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let len = dims[axis];
    let mut data = Vec::with_capacity(t.len() / len * (len - gone.len()));
    for o in 0..outer {
        for a in (0..len).filter(|a| !gone.contains(a)) {
            let start = (o * len + a) * inner;
            data.extend_from_slice(&t.data()[start..start + inner]);
        }
    }
    let mut new_dims = dims.to_vec();
    new_dims[axis] -= gone.len();
    Tensor::from_parts(new_dims, data)
}

pub(crate) fn apply_edit_weights(graph: &NetworkGraph, weights: &WeightStore, edit: &ChannelEdit) -> Result<WeightStore> {
    let empty = BTreeSet::new();
    let mut out = WeightStore::new();
    for (i, spec) in graph.layers().iter().enumerate() {
        let Some(w) = weights.get(&spec.id) else { continue };
        let outs = edit.outputs.get(&i).unwrap_or(&empty);
        let ins = edit.inputs.get(&i).unwrap_or(&empty);
        let pw = match w {
            LayerWeights::Conv { weight, bias } => LayerWeights::Conv {
                weight: drop_axis(&drop_axis(weight, 0, outs), 1, ins),
                bias: drop_axis(bias, 0, outs),
            },
            LayerWeights::Dense { weight, bias } => LayerWeights::Dense {
                weight: drop_axis(&drop_axis(weight, 0, outs), 1, ins),
                bias: drop_axis(bias, 0, outs),
            },
            LayerWeights::BatchNorm { scale, shift, running_mean, running_var } => {
                let gone = edit.per_channel.get(&i).unwrap_or(&empty);
                LayerWeights::BatchNorm {
                    scale: drop_axis(scale, 0, gone),
                    shift: drop_axis(shift, 0, gone),
                    running_mean: drop_axis(running_mean, 0, gone),
                    running_var: drop_axis(running_var, 0, gone),
                }
            }
        };
        out.insert(spec.id.clone(), pw);
    }
    Ok(out)
}

/// Removes the plan's filters, the matching input slices of every consumer,
/// and per-channel batchnorm parameters. Channel-select removals only shrink
/// the kept list and the consumer's input slices.
pub fn apply_plan_weights(
    graph: &NetworkGraph,
    weights: &WeightStore,
    plan: &PruningPlan,
) -> Result<(NetworkGraph, WeightStore)> {
    weights.check(graph)?;
    let pruned = plan.validate(graph)?;
    let edit = plan.edit(graph)?;
    let w = apply_edit_weights(graph, weights, &edit)?;
    w.check(&pruned)?;
    Ok((pruned, w))
}
