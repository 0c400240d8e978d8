//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use chanprune::netgraph::{LayerKind, NetworkGraph, Shape};
use chanprune::tensorstore::ActivationSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy_cnn")
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Output shapes by re-deriving every layer from its parameters.
pub fn oracle_shapes(graph: &NetworkGraph) -> Vec<Shape> {
    let mut by_id: BTreeMap<String, Shape> = BTreeMap::new();
    by_id.insert("input".into(), graph.input_shape());
    let mut out = Vec::new();
    for l in graph.layers() {
        let x = by_id[&l.inputs[0]];
        let window = |k: usize, s: usize, p: usize, n: usize| (n + 2 * p - k) / s + 1;
        let s = match &l.kind {
            LayerKind::Conv2d { out_ch, kernel, stride, padding, .. } => Shape::new(
                *out_ch,
                window(*kernel, *stride, *padding, x.w),
                window(*kernel, *stride, *padding, x.h),
            ),
            LayerKind::MaxPool { window: k, stride, padding } | LayerKind::AvgPool { window: k, stride, padding } => {
                Shape::new(x.c, window(*k, *stride, *padding, x.w), window(*k, *stride, *padding, x.h))
            }
            LayerKind::Dense { out_dim, .. } => Shape::new(*out_dim, 1, 1),
            LayerKind::Flatten => Shape::new(x.c * x.w * x.h, 1, 1),
            LayerKind::ChannelSelect { kept } => Shape::new(kept.len(), x.w, x.h),
            _ => x,
        };
        by_id.insert(l.id.clone(), s);
        out.push(s);
    }
    out
}

/// Multiply-accumulates of conv and dense layers, counted from scratch.
pub fn oracle_flops(graph: &NetworkGraph) -> u64 {
    let shapes = oracle_shapes(graph);
    graph
        .layers()
        .iter()
        .zip(&shapes)
        .map(|(l, s)| match l.kind {
            LayerKind::Conv2d { in_ch, out_ch, kernel, .. } => {
                out_ch as u64 * in_ch as u64 * (kernel * kernel) as u64 * (s.w * s.h) as u64
            }
            LayerKind::Dense { in_dim, out_dim } => in_dim as u64 * out_dim as u64,
            _ => 0,
        })
        .sum()
}

/// Weights, biases and batchnorm scale/shift, counted from scratch.
pub fn oracle_params(graph: &NetworkGraph) -> u64 {
    graph
        .layers()
        .iter()
        .map(|l| match l.kind {
            LayerKind::Conv2d { in_ch, out_ch, kernel, .. } => (out_ch * in_ch * kernel * kernel + out_ch) as u64,
            LayerKind::Dense { in_dim, out_dim } => (in_dim * out_dim + out_dim) as u64,
            LayerKind::BatchNorm { channels } => 2 * channels as u64,
            _ => 0,
        })
        .sum()
}

/// Masks that make the unpruned network compute what the pruned one does:
/// the removed outputs of each planned layer, and the same channels of every
/// batchnorm they pass through before reaching a conv, dense or flatten.
pub fn zero_masks(graph: &NetworkGraph, removed: &BTreeMap<String, Vec<usize>>) -> BTreeMap<String, BTreeSet<usize>> {
    let mut masks: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (id, chans) in removed {
        let set: BTreeSet<usize> = chans.iter().copied().collect();
        masks.entry(id.clone()).or_default().extend(&set);
        let mut frontier = vec![id.clone()];
        while let Some(cur) = frontier.pop() {
            for l in graph.layers().iter().filter(|l| l.inputs.contains(&cur)) {
                match l.kind {
                    LayerKind::BatchNorm { .. } => {
                        masks.entry(l.id.clone()).or_default().extend(&set);
                        frontier.push(l.id.clone());
                    }
                    LayerKind::Relu | LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. } => {
                        frontier.push(l.id.clone())
                    }
                    _ => {}
                }
            }
        }
    }
    masks
}

/// Two-pass mean and unbiased variance.
pub fn two_pass(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Uni {
    Sd,
    AbsSnr,
    Fdr,
    Ttest,
}

/// One-vs-rest average of a two-sample statistic over every activation
/// value of each partition, from two-pass moments.
pub fn oracle_g(set: &ActivationSet, which: Uni, epsilon: f64) -> f64 {
    let classes = set.num_classes();
    let mut total = 0.0;
    for c in 0..classes {
        let mut p = Vec::new();
        let mut q = Vec::new();
        for (m, &l) in set.maps().zip(set.labels()) {
            let dst = if l as usize == c { &mut p } else { &mut q };
            dst.extend(m.iter().map(|&v| v as f64));
        }
        let (mp, vp) = two_pass(&p);
        let (mq, vq) = two_pass(&q);
        let (vp, vq) = (vp.max(epsilon), vq.max(epsilon));
        let d = mp - mq;
        total += match which {
            Uni::Sd => 0.5 * (vp / vq + vq / vp) + 0.5 * d * d / (vp + vq) - 1.0,
            Uni::AbsSnr => d.abs() / (vp.sqrt() + vq.sqrt()),
            Uni::Fdr => d * d / (vp + vq),
            Uni::Ttest => d.abs() / (vp / p.len() as f64 + vq / q.len() as f64).sqrt(),
        };
    }
    total / classes as f64
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[r][j] -= f * m[col][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// `trace((S_T + rho I)^-1 S_B)` with explicit scatter matrices and inverse.
pub fn oracle_di(set: &ActivationSet, rho: f64) -> f64 {
    let d = set.map_len();
    let n = set.len();
    let x: Vec<Vec<f64>> = set.maps().map(|m| m.iter().map(|&v| v as f64).collect()).collect();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut st = vec![vec![0.0; d]; d];
    for r in &x {
        for i in 0..d {
            for j in 0..d {
                st[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for (i, row) in st.iter_mut().enumerate() {
        row[i] += rho;
    }
    let mut sb = vec![vec![0.0; d]; d];
    for c in 0..set.num_classes() {
        let rows: Vec<&Vec<f64>> = x.iter().zip(set.labels()).filter(|(_, &l)| l as usize == c).map(|(r, _)| r).collect();
        let nc = rows.len() as f64;
        let mu: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nc).collect();
        for i in 0..d {
            for j in 0..d {
                sb[i][j] += nc * (mu[i] - mean[i]) * (mu[j] - mean[j]);
            }
        }
    }
    let inv = gauss_jordan_inverse(&st);
    (0..d).map(|i| (0..d).map(|k| inv[i][k] * sb[k][i]).sum::<f64>()).sum()
}

/// Biased MMD^2 with an RBF kernel, every pair summed explicitly.
pub fn oracle_mmd_two(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> f64 {
    let k = |x: &[f64], y: &[f64]| {
        let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let mean_k = |u: &[Vec<f64>], v: &[Vec<f64>]| {
        let mut s = 0.0;
        for x in u {
            for y in v {
                s += k(x, y);
            }
        }
        s / (u.len() * v.len()) as f64
    };
    mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b)
}

/// One-vs-rest average of [`oracle_mmd_two`] with no subsampling.
pub fn oracle_mmd(set: &ActivationSet, sigma: f64) -> f64 {
    let classes = set.num_classes();
    let mut total = 0.0;
    for c in 0..classes {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (m, &l) in set.maps().zip(set.labels()) {
            let row: Vec<f64> = m.iter().map(|&v| v as f64).collect();
            if l as usize == c { a.push(row) } else { b.push(row) }
        }
        total += oracle_mmd_two(&a, &b, sigma);
    }
    total / classes as f64
}

/// Random activation set: 2 to 5 classes with at least 2 samples each,
/// per-class offsets and scales. Values are multiples of 1/16 so small
/// affine maps stay exact in f32.
pub fn random_set(rng: &mut ChaCha8Rng, max_wh: usize, max_per_class: usize) -> ActivationSet {
    let classes = rng.random_range(2..=5);
    let w = rng.random_range(1..=max_wh);
    let h = rng.random_range(1..=(max_wh / w).max(1));
    let mut labels = Vec::new();
    for c in 0..classes {
        labels.extend(std::iter::repeat_n(c as u32, rng.random_range(2..=max_per_class)));
    }
    let offsets: Vec<f64> = (0..classes).map(|_| rng.random_range(-4.0..4.0)).collect();
    let scales: Vec<f64> = (0..classes).map(|_| rng.random_range(0.5..3.0)).collect();
    let mut data = Vec::with_capacity(labels.len() * w * h);
    for &l in &labels {
        for _ in 0..w * h {
            let v = offsets[l as usize] + scales[l as usize] * rng.random_range(-1.0..1.0);
            data.push(((v * 16.0).round() / 16.0) as f32);
        }
    }
    ActivationSet::new(w, h, data, labels, classes).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` distinct indices below `c`, sorted.
pub fn random_subset(rng: &mut ChaCha8Rng, c: usize, n: usize) -> Vec<usize> {
    let mut v = rand::seq::index::sample(rng, c, n).into_vec();
    v.sort_unstable();
    v
}

/// Straightforward f64 interpreter for one sample `[C, W, H]`, layer by layer.
pub fn naive_forward(
    graph: &NetworkGraph,
    weights: &chanprune::engine::WeightStore,
    sample: &[f32],
) -> Vec<f64> {
    use chanprune::engine::LayerWeights;
    let mut vals: BTreeMap<String, (Shape, Vec<f64>)> = BTreeMap::new();
    vals.insert("input".into(), (graph.input_shape(), sample.iter().map(|&v| v as f64).collect()));
    let at = |s: Shape, c: usize, x: usize, y: usize| (c * s.w + x) * s.h + y;
    let mut last = String::new();
    for l in graph.layers() {
        let (s, x) = vals[&l.inputs[0]].clone();
        let (os, out): (Shape, Vec<f64>) = match (&l.kind, weights.get(&l.id)) {
            (LayerKind::Conv2d { in_ch, out_ch, kernel, stride, padding }, Some(LayerWeights::Conv { weight, bias })) => {
                let (k, st, p) = (*kernel, *stride, *padding);
                let os = Shape::new(*out_ch, (s.w + 2 * p - k) / st + 1, (s.h + 2 * p - k) / st + 1);
                let wd = weight.data();
                let mut out = vec![0.0; os.len()];
                for o in 0..*out_ch {
                    for ox in 0..os.w {
                        for oy in 0..os.h {
                            let mut acc = bias.data()[o] as f64;
                            for i in 0..*in_ch {
                                for kx in 0..k {
                                    for ky in 0..k {
                                        let ix = (ox * st + kx) as isize - p as isize;
                                        let iy = (oy * st + ky) as isize - p as isize;
                                        if ix < 0 || iy < 0 || ix >= s.w as isize || iy >= s.h as isize {
                                            continue;
                                        }
                                        let wv = wd[((o * in_ch + i) * k + kx) * k + ky] as f64;
                                        acc += wv * x[at(s, i, ix as usize, iy as usize)];
                                    }
                                }
                            }
                            out[at(os, o, ox, oy)] = acc;
                        }
                    }
                }
                (os, out)
            }
            (LayerKind::Dense { in_dim, out_dim }, Some(LayerWeights::Dense { weight, bias })) => {
                let out = (0..*out_dim)
                    .map(|o| {
                        bias.data()[o] as f64
                            + (0..*in_dim).map(|i| weight.data()[o * in_dim + i] as f64 * x[i]).sum::<f64>()
                    })
                    .collect();
                (Shape::new(*out_dim, 1, 1), out)
            }
            (LayerKind::BatchNorm { .. }, Some(LayerWeights::BatchNorm { scale, shift, running_mean, running_var })) => {
                let m = s.w * s.h;
                let out = x
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let c = j / m;
                        let norm = (v - running_mean.data()[c] as f64) / (running_var.data()[c] as f64 + 1e-5).sqrt();
                        scale.data()[c] as f64 * norm + shift.data()[c] as f64
                    })
                    .collect();
                (s, out)
            }
            (LayerKind::Relu, _) => (s, x.iter().map(|v| v.max(0.0)).collect()),
            (LayerKind::MaxPool { window, stride, padding } | LayerKind::AvgPool { window, stride, padding }, _) => {
                let max = matches!(l.kind, LayerKind::MaxPool { .. });
                let (k, st, p) = (*window, *stride, *padding);
                let os = Shape::new(s.c, (s.w + 2 * p - k) / st + 1, (s.h + 2 * p - k) / st + 1);
                let mut out = vec![0.0; os.len()];
                for c in 0..s.c {
                    for ox in 0..os.w {
                        for oy in 0..os.h {
                            let mut best = f64::NEG_INFINITY;
                            let mut sum = 0.0;
                            for kx in 0..k {
                                for ky in 0..k {
                                    let ix = (ox * st + kx) as isize - p as isize;
                                    let iy = (oy * st + ky) as isize - p as isize;
                                    if ix < 0 || iy < 0 || ix >= s.w as isize || iy >= s.h as isize {
                                        continue;
                                    }
                                    let v = x[at(s, c, ix as usize, iy as usize)];
                                    best = best.max(v);
                                    sum += v;
                                }
                            }
                            out[at(os, c, ox, oy)] = if max { best } else { sum / (k * k) as f64 };
                        }
                    }
                }
                (os, out)
            }
            (LayerKind::Add, _) => {
                let other = &vals[&l.inputs[1]].1;
                (s, x.iter().zip(other).map(|(a, b)| a + b).collect())
            }
            (LayerKind::ChannelSelect { kept }, _) => {
                let m = s.w * s.h;
                let out = kept.iter().flat_map(|&c| x[c * m..(c + 1) * m].to_vec()).collect();
                (Shape::new(kept.len(), s.w, s.h), out)
            }
            (LayerKind::Flatten, _) => (Shape::new(s.len(), 1, 1), x),
            (LayerKind::Softmax, _) => {
                let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                (s, e.iter().map(|v| v / z).collect())
            }
            (kind, _) => panic!("missing weights for {} layer {}", kind.name(), l.id),
        };
        vals.insert(l.id.clone(), (os, out));
        last = l.id.clone();
    }
    vals.remove(&last).unwrap().1
}
