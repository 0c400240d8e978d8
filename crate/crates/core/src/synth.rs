//! Seeded synthetic data and networks for tests, demos and benchmarks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::engine::{Dataset, LayerWeights, WeightStore};
use crate::error::Result;
use crate::metrics::seeded_stream;
use crate::netgraph::{LayerKind, LayerSpec, NetworkGraph, Shape};
use crate::tensorstore::{ActivationSet, LabelFile, Tensor};

fn gauss(rng: &mut ChaCha8Rng) -> f32 {
    let v: f64 = StandardNormal.sample(rng);
    v as f32
}

fn balanced_labels(n: usize, classes: usize) -> Vec<u32> {
    (0..n).map(|i| (i % classes) as u32).collect()
}

/// Two-channel activation dump `[N, 2, W, H]`: channel 0 has a per-class mean
/// offset of `separation` standard deviations, channel 1 has the same
/// distribution for every class.
pub fn two_channel_set(
    per_class: usize,
    classes: usize,
    w: usize,
    h: usize,
    separation: f32,
    seed: u64,
) -> Result<(Tensor, LabelFile)> {
    let mut rng = seeded_stream(seed, 1);
    let labels = balanced_labels(per_class * classes, classes);
    let m = w * h;
    let mut data = Vec::with_capacity(labels.len() * 2 * m);
    for &l in &labels {
        let mean = l as f32 * separation;
        data.extend((0..m).map(|_| mean + gauss(&mut rng)));
        data.extend((0..m).map(|_| gauss(&mut rng)));
    }
    Ok((
        Tensor::new(vec![labels.len(), 2, w, h], data)?,
        LabelFile::new(labels),
    ))
}

/// One channel of `n` maps whose class means step by `separation`.
pub fn channel_maps(n: usize, classes: usize, w: usize, h: usize, separation: f32, seed: u64) -> Result<ActivationSet> {
    let mut rng = seeded_stream(seed, 2);
    let labels = balanced_labels(n, classes);
    let m = w * h;
    let mut data = Vec::with_capacity(n * m);
    for &l in &labels {
        let mean = l as f32 * separation;
        data.extend((0..m).map(|_| mean + gauss(&mut rng)));
    }
    ActivationSet::new(w, h, data, labels, classes)
}

pub const TOY_CLASSES: usize = 4;
pub const TOY_SIDE: usize = 12;

/// Images `[N, 3, 12, 12]` of 4 classes. Channel 0 carries one bar per image
/// (horizontal, vertical, diagonal or anti-diagonal by class) at a random
/// offset and contrast; every channel has Gaussian noise of std `noise`.
pub fn toy_images(n: usize, noise: f32, seed: u64) -> Result<Dataset> {
    let mut rng = seeded_stream(seed, 3);
    let side = TOY_SIDE;
    let plane = side * side;
    let labels = balanced_labels(n, TOY_CLASSES);
    let mut data = Vec::with_capacity(n * 3 * plane);
    for &l in &labels {
        let start = data.len();
        data.extend((0..3 * plane).map(|_| noise * gauss(&mut rng)));
        let img = &mut data[start..start + plane];
        let offset = rng.random_range(2..side - 2);
        let amp: f32 = rng.random_range(0.6..1.4);
        for t in 0..side {
            let (x, y) = match l {
                0 => (offset, t),
                1 => (t, offset),
                2 => (t, (t + offset) % side),
                _ => (t, (side + offset - t) % side),
            };
            img[x * side + y] += amp;
        }
    }
    Dataset::new(Tensor::new(vec![n, 3, side, side], data)?, LabelFile::new(labels))
}

pub const SIGNAL_CLASSES: usize = 4;

/// Dense network with 8 inputs, 16 hidden units and 4 outputs. Hidden units
/// `2c` and `2c + 1` copy input `c` (the class-`c` signal) and feed output
/// `c`; hidden units 8..16 copy the noise inputs and feed nothing.
pub fn signal_noise_model() -> (NetworkGraph, WeightStore) {
    let graph = NetworkGraph::new(
        Shape::new(8, 1, 1),
        vec![
            LayerSpec::new("hidden", LayerKind::Dense { in_dim: 8, out_dim: 16 }, &["input"]).prunable(true),
            LayerSpec::new("relu", LayerKind::Relu, &["hidden"]),
            LayerSpec::new("out", LayerKind::Dense { in_dim: 16, out_dim: 4 }, &["relu"]),
        ],
    )
    .expect("valid graph");
    let mut w1 = vec![0.0f32; 16 * 8];
    for c in 0..4 {
        w1[(2 * c) * 8 + c] = 1.0;
        w1[(2 * c + 1) * 8 + c] = 1.0;
    }
    for j in 8..16 {
        w1[j * 8 + 4 + (j % 4)] = 1.0;
    }
    let mut w2 = vec![0.0f32; 4 * 16];
    for c in 0..4 {
        w2[c * 16 + 2 * c] = 1.0;
        w2[c * 16 + 2 * c + 1] = 1.0;
    }
    let mut weights = WeightStore::new();
    weights.insert(
        "hidden",
        LayerWeights::Dense {
            weight: Tensor::new(vec![16, 8], w1).expect("dims"),
            bias: Tensor::new(vec![16], vec![0.0; 16]).expect("dims"),
        },
    );
    weights.insert(
        "out",
        LayerWeights::Dense {
            weight: Tensor::new(vec![4, 16], w2).expect("dims"),
            bias: Tensor::new(vec![4], vec![0.0; 4]).expect("dims"),
        },
    );
    (graph, weights)
}

/// Inputs for [`signal_noise_model`]: input `c < 4` is `2 * [label == c]`
/// plus noise of std 0.3; inputs 4..8 are noise of std 1.
pub fn signal_noise_data(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeded_stream(seed, 4);
    let labels = balanced_labels(n, SIGNAL_CLASSES);
    let mut data = Vec::with_capacity(n * 8);
    for &l in &labels {
        for c in 0..4 {
            let signal = if c == l as usize { 2.0 } else { 0.0 };
            data.push(signal + 0.3 * gauss(&mut rng));
        }
        data.extend((0..4).map(|_| gauss(&mut rng)));
    }
    Dataset::new(Tensor::new(vec![n, 8, 1, 1], data)?, LabelFile::new(labels))
}

/// Random valid network mixing conv chains, pooling and (if `residual`)
/// channel-select bottleneck blocks, ending in a dense classifier. Every
/// layer whose channels can be removed is marked prunable except the
/// classifier.
pub fn random_network(seed: u64, residual: bool) -> NetworkGraph {
    let mut rng = seeded_stream(seed, 5);
    let c0 = rng.random_range(1..=3);
    let input = Shape::new(c0, rng.random_range(5..=9), rng.random_range(5..=9));
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut prev = "input".to_string();
    let mut shape = input;
    let stages = rng.random_range(1..=3);
    let mut n = 0;
    let mut fresh = |p: &str| {
        n += 1;
        format!("{p}{n}")
    };
    for _ in 0..stages {
        if residual && rng.random_bool(0.5) {
            let width = shape.c;
            let sel = fresh("sel");
            layers.push(LayerSpec::new(&sel, LayerKind::ChannelSelect { kept: (0..width).collect() }, &[&prev]));
            let mid = rng.random_range(2..=5);
            let c1 = fresh("conv");
            let k = if rng.random_bool(0.5) { 1 } else { 3 };
            layers.push(LayerSpec::new(
                &c1,
                LayerKind::Conv2d { in_ch: width, out_ch: mid, kernel: k, stride: 1, padding: k / 2 },
                &[&sel],
            ));
            let mut t = c1;
            if rng.random_bool(0.5) {
                let bn = fresh("bn");
                layers.push(LayerSpec::new(&bn, LayerKind::BatchNorm { channels: mid }, &[&t]));
                t = bn;
            }
            let r = fresh("relu");
            layers.push(LayerSpec::new(&r, LayerKind::Relu, &[&t]));
            let c2 = fresh("conv");
            layers.push(LayerSpec::new(
                &c2,
                LayerKind::Conv2d { in_ch: mid, out_ch: width, kernel: 3, stride: 1, padding: 1 },
                &[&r],
            ));
            let add = fresh("add");
            layers.push(LayerSpec::new(&add, LayerKind::Add, &[&c2, &prev]));
            let out = fresh("relu");
            layers.push(LayerSpec::new(&out, LayerKind::Relu, &[&add]));
            prev = out;
        } else {
            let out_ch = rng.random_range(2..=6);
            let k = [1, 3, 3][rng.random_range(0..3)];
            let stride = if shape.w >= 6 && shape.h >= 6 && rng.random_bool(0.3) { 2 } else { 1 };
            let padding = if k == 3 && rng.random_bool(0.7) { 1 } else { 0 };
            if shape.w + 2 * padding < k || shape.h + 2 * padding < k {
                continue;
            }
            let c = fresh("conv");
            layers.push(LayerSpec::new(
                &c,
                LayerKind::Conv2d { in_ch: shape.c, out_ch, kernel: k, stride, padding },
                &[&prev],
            ));
            prev = c;
            if rng.random_bool(0.5) {
                let bn = fresh("bn");
                layers.push(LayerSpec::new(&bn, LayerKind::BatchNorm { channels: out_ch }, &[&prev]));
                prev = bn;
            }
            let r = fresh("relu");
            layers.push(LayerSpec::new(&r, LayerKind::Relu, &[&prev]));
            prev = r;
        }
        shape = NetworkGraph::new(input, layers.clone()).expect("generated prefix is valid").output_shape();
        if shape.w >= 4 && shape.h >= 4 && rng.random_bool(0.4) {
            let p = fresh("pool");
            let kind = if rng.random_bool(0.5) {
                LayerKind::MaxPool { window: 2, stride: 2, padding: 0 }
            } else {
                LayerKind::AvgPool { window: 3, stride: 2, padding: 1 }
            };
            layers.push(LayerSpec::new(&p, kind, &[&prev]));
            prev = p;
            shape = NetworkGraph::new(input, layers.clone()).expect("valid").output_shape();
        }
    }
    let classes = rng.random_range(2..=4);
    if rng.random_bool(0.5) {
        let f = fresh("flatten");
        layers.push(LayerSpec::new(&f, LayerKind::Flatten, &[&prev]));
        let hidden = rng.random_range(2..=6);
        let d = fresh("dense");
        layers.push(LayerSpec::new(&d, LayerKind::Dense { in_dim: shape.len(), out_dim: hidden }, &[&f]));
        let r = fresh("relu");
        layers.push(LayerSpec::new(&r, LayerKind::Relu, &[&d]));
        layers.push(LayerSpec::new("classifier", LayerKind::Dense { in_dim: hidden, out_dim: classes }, &[&r]));
    } else {
        let g = fresh("gap");
        layers.push(LayerSpec::new(
            &g,
            LayerKind::AvgPool { window: shape.w.min(shape.h), stride: shape.w.min(shape.h), padding: 0 },
            &[&prev],
        ));
        let s = NetworkGraph::new(input, layers.clone()).expect("valid").output_shape();
        let f = fresh("flatten");
        layers.push(LayerSpec::new(&f, LayerKind::Flatten, &[&g]));
        layers.push(LayerSpec::new("classifier", LayerKind::Dense { in_dim: s.len(), out_dim: classes }, &[&f]));
    }
    let unflagged = NetworkGraph::new(input, layers.clone()).expect("generated network is valid");
    let last = layers.len() - 1;
    for (i, spec) in layers.iter_mut().enumerate() {
        spec.prunable = i != last && unflagged.can_remove_channels(i);
    }
    NetworkGraph::new(input, layers).expect("generated network is valid")
}

/// Random weights plus batchnorm statistics for [`random_network`].
pub fn random_weights(graph: &NetworkGraph, seed: u64) -> WeightStore {
    WeightStore::random(graph, seed)
}

/// `n` inputs for `graph` with values from N(0, 1) and balanced labels.
pub fn random_inputs(graph: &NetworkGraph, n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeded_stream(seed, 6);
    let s = graph.input_shape();
    let d = Normal::new(0.0f32, 1.0).expect("unit normal");
    let data = (0..n * s.len()).map(|_| d.sample(&mut rng)).collect();
    Dataset::new(
        Tensor::new(vec![n, s.c, s.w, s.h], data)?,
        LabelFile::new(balanced_labels(n, classes.max(1))),
    )
}
