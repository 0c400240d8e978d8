//! Reference architectures.

use super::{LayerKind, LayerSpec, NetworkGraph, Shape};

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn new() -> Self {
        Builder { layers: Vec::new() }
    }

    fn push(&mut self, id: &str, kind: LayerKind, inputs: &[&str], prunable: bool) -> String {
        self.layers.push(LayerSpec::new(id, kind, inputs).prunable(prunable));
        id.to_string()
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        id: &str,
        input: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        prunable: bool,
    ) -> String {
        let kind = LayerKind::Conv2d { in_ch, out_ch, kernel, stride, padding };
        self.push(id, kind, &[input], prunable)
    }

    fn bn(&mut self, id: &str, input: &str, channels: usize) -> String {
        self.push(id, LayerKind::BatchNorm { channels }, &[input], false)
    }

    fn relu(&mut self, id: &str, input: &str) -> String {
        self.push(id, LayerKind::Relu, &[input], false)
    }

    fn finish(self, input: Shape) -> NetworkGraph {
        NetworkGraph::new(input, self.layers).expect("zoo architectures are valid")
    }
}

/// VGG-16 at 224x224 input with 1000 classes.
pub fn vgg16() -> NetworkGraph {
    let stages: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut b = Builder::new();
    let mut prev = "input".to_string();
    let mut ch = 3;
    for (s, widths) in stages.iter().enumerate() {
        for (j, &w) in widths.iter().enumerate() {
            let id = format!("conv{}_{}", s + 1, j + 1);
            b.conv(&id, &prev, ch, w, 3, 1, 1, true);
            prev = b.relu(&format!("relu{}_{}", s + 1, j + 1), &id);
            ch = w;
        }
        let kind = LayerKind::MaxPool { window: 2, stride: 2, padding: 0 };
        prev = b.push(&format!("pool{}", s + 1), kind, &[&prev], false);
    }
    prev = b.push("flatten", LayerKind::Flatten, &[&prev], false);
    let fcs = [(25_088, 4096), (4096, 4096), (4096, 1000)];
    for (i, &(din, dout)) in fcs.iter().enumerate() {
        let id = format!("fc_{}", i + 1);
        let last = i + 1 == fcs.len();
        b.push(&id, LayerKind::Dense { in_dim: din, out_dim: dout }, &[&prev], !last);
        prev = if last { id } else { b.relu(&format!("fc_relu{}", i + 1), &id) };
    }
    b.push("softmax", LayerKind::Softmax, &[&prev], false);
    b.finish(Shape::new(3, 224, 224))
}

/// Bottleneck residual block with a channel_select at its entry.
/// Returns the block output id.
fn bottleneck(b: &mut Builder, name: &str, input: &str, in_ch: usize, width: usize, stride: usize) -> String {
    let out_ch = width * 4;
    let kept = (0..in_ch).collect();
    let sel = b.push(&format!("{name}_select"), LayerKind::ChannelSelect { kept }, &[input], true);
    let c1 = b.conv(&format!("{name}_conv1"), &sel, in_ch, width, 1, 1, 0, true);
    let x = b.bn(&format!("{name}_bn1"), &c1, width);
    let x = b.relu(&format!("{name}_relu1"), &x);
    let c2 = b.conv(&format!("{name}_conv2"), &x, width, width, 3, stride, 1, true);
    let x = b.bn(&format!("{name}_bn2"), &c2, width);
    let x = b.relu(&format!("{name}_relu2"), &x);
    let c3 = b.conv(&format!("{name}_conv3"), &x, width, out_ch, 1, 1, 0, false);
    let trunk = b.bn(&format!("{name}_bn3"), &c3, out_ch);
    let skip = if stride != 1 || in_ch != out_ch {
        let d = b.conv(&format!("{name}_down"), input, in_ch, out_ch, 1, stride, 0, false);
        b.bn(&format!("{name}_down_bn"), &d, out_ch)
    } else {
        input.to_string()
    };
    let sum = b.push(&format!("{name}_add"), LayerKind::Add, &[&trunk, &skip], false);
    b.relu(&format!("{name}_out"), &sum)
}

/// ResNet-50 (stride on the 3x3 conv of each bottleneck) at 224x224, 1000 classes.
pub fn resnet50() -> NetworkGraph {
    let mut b = Builder::new();
    b.conv("conv1", "input", 3, 64, 7, 2, 3, false);
    b.bn("bn1", "conv1", 64);
    b.relu("relu1", "bn1");
    let mut prev = b.push("pool1", LayerKind::MaxPool { window: 3, stride: 2, padding: 1 }, &["relu1"], false);
    let mut ch = 64;
    for (s, (&blocks, &width)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
        for i in 0..blocks {
            let stride = if i == 0 && s > 0 { 2 } else { 1 };
            prev = bottleneck(&mut b, &format!("layer{}_{}", s + 1, i), &prev, ch, width, stride);
            ch = width * 4;
        }
    }
    b.push("avgpool", LayerKind::AvgPool { window: 7, stride: 7, padding: 0 }, &[&prev], false);
    b.push("flatten", LayerKind::Flatten, &["avgpool"], false);
    b.push("fc", LayerKind::Dense { in_dim: 2048, out_dim: 1000 }, &["flatten"], false);
    b.push("softmax", LayerKind::Softmax, &["fc"], false);
    b.finish(Shape::new(3, 224, 224))
}

/// Small residual network: a stem conv, `blocks` bottlenecks of base width
/// `width`, global pooling and a classifier.
pub fn toy_resnet(input: Shape, width: usize, blocks: usize, classes: usize) -> NetworkGraph {
    let mut b = Builder::new();
    let stem = width * 4;
    b.conv("stem", "input", input.c, stem, 3, 1, 1, false);
    let mut prev = b.relu("stem_relu", "stem");
    for i in 0..blocks {
        prev = bottleneck(&mut b, &format!("block{i}"), &prev, stem, width, 1);
    }
    let kind = LayerKind::AvgPool { window: input.w.min(input.h), stride: input.w.min(input.h), padding: 0 };
    b.push("gap", kind, &[&prev], false);
    b.push("flatten", LayerKind::Flatten, &["gap"], false);
    b.push("fc", LayerKind::Dense { in_dim: stem, out_dim: classes }, &["flatten"], false);
    b.finish(input)
}

/// Four convolutions and two dense layers on 3x12x12 inputs, 4 classes.
pub fn toy_cnn() -> NetworkGraph {
    let mut b = Builder::new();
    b.conv("conv1", "input", 3, 8, 3, 1, 1, true);
    b.bn("bn1", "conv1", 8);
    b.relu("relu1", "bn1");
    b.conv("conv2", "relu1", 8, 16, 3, 1, 1, true);
    b.bn("bn2", "conv2", 16);
    b.relu("relu2", "bn2");
    b.push("pool2", LayerKind::MaxPool { window: 2, stride: 2, padding: 0 }, &["relu2"], false);
    b.conv("conv3", "pool2", 16, 16, 3, 1, 1, true);
    b.relu("relu3", "conv3");
    b.conv("conv4", "relu3", 16, 32, 3, 1, 1, true);
    b.bn("bn4", "conv4", 32);
    b.relu("relu4", "bn4");
    b.push("gap", LayerKind::AvgPool { window: 6, stride: 6, padding: 0 }, &["relu4"], false);
    b.push("fc1", LayerKind::Dense { in_dim: 32, out_dim: 16 }, &["gap"], true);
    b.relu("relu5", "fc1");
    b.push("fc2", LayerKind::Dense { in_dim: 16, out_dim: 4 }, &["relu5"], false);
    b.finish(Shape::new(3, 12, 12))
}
