//! Single-sample f32 kernels over `[C, W, H]` buffers.
//!
//! Every kernel visits its terms in a fixed order so outputs are
//! reproducible bit-for-bit.

use crate::netgraph::Shape;

/// Valid output positions `o` for kernel tap `t`: `o * stride + t - pad` in `[0, len)`.
fn tap_range(len: usize, out_len: usize, stride: usize, tap: usize, pad: usize) -> std::ops::Range<usize> {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    // largest o with o*stride + tap - pad <= len - 1
    let hi = if len + pad > tap {
        ((len + pad - tap - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    lo..hi.max(lo)
}

/// Cross-correlation with zero padding; `weight` is `[out, in, k, k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d(
    input: &[f32],
    s: Shape,
    weight: &[f32],
    bias: &[f32],
    kernel: usize,
    stride: usize,
    pad: usize,
    out: Shape,
) -> Vec<f32> {
    let plane = out.w * out.h;
    let mut y = vec![0.0f32; out.c * plane];
    let ranges_x: Vec<_> = (0..kernel).map(|t| tap_range(s.w, out.w, stride, t, pad)).collect();
    let ranges_y: Vec<_> = (0..kernel).map(|t| tap_range(s.h, out.h, stride, t, pad)).collect();
    for o in 0..out.c {
        let dst = &mut y[o * plane..(o + 1) * plane];
        dst.fill(bias[o]);
        for i in 0..s.c {
            let src = &input[i * s.w * s.h..(i + 1) * s.w * s.h];
            let wk = &weight[(o * s.c + i) * kernel * kernel..(o * s.c + i + 1) * kernel * kernel];
            for kx in 0..kernel {
                for ky in 0..kernel {
                    let w = wk[kx * kernel + ky];
                    for ox in ranges_x[kx].clone() {
                        let ix = ox * stride + kx - pad;
                        let row = &src[ix * s.h..(ix + 1) * s.h];
                        let drow = &mut dst[ox * out.h..(ox + 1) * out.h];
                        for oy in ranges_y[ky].clone() {
                            drow[oy] += w * row[oy * stride + ky - pad];
                        }
                    }
                }
            }
        }
    }
    y
}

/// `weight` is `[out, in]`.
pub(crate) fn dense(input: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let n_in = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * n_in..(o + 1) * n_in];
            let mut acc = b;
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            acc
        })
        .collect()
}

/// Max over the in-bounds part of each window; padding never wins.
pub(crate) fn maxpool(input: &[f32], s: Shape, window: usize, stride: usize, pad: usize, out: Shape) -> Vec<f32> {
    pool(input, s, window, stride, pad, out, |vals| {
        vals.fold(f32::NEG_INFINITY, f32::max)
    })
}

/// Mean over the full window, padding counted as zeros.
pub(crate) fn avgpool(input: &[f32], s: Shape, window: usize, stride: usize, pad: usize, out: Shape) -> Vec<f32> {
    let area = (window * window) as f32;
    pool(input, s, window, stride, pad, out, |vals| {
        vals.fold(0.0f32, |a, v| a + v) / area
    })
}

fn pool(
    input: &[f32],
    s: Shape,
    window: usize,
    stride: usize,
    pad: usize,
    out: Shape,
    reduce: impl Fn(&mut dyn Iterator<Item = f32>) -> f32,
) -> Vec<f32> {
    let mut y = Vec::with_capacity(out.len());
    for c in 0..s.c {
        let src = &input[c * s.w * s.h..(c + 1) * s.w * s.h];
        for ox in 0..out.w {
            for oy in 0..out.h {
                let x0 = ox * stride;
                let y0 = oy * stride;
                let mut vals = (0..window).flat_map(|dx| (0..window).map(move |dy| (x0 + dx, y0 + dy)))
                    .filter(|&(px, py)| px >= pad && py >= pad && px - pad < s.w && py - pad < s.h)
                    .map(|(px, py)| src[(px - pad) * s.h + py - pad]);
                y.push(reduce(&mut vals));
            }
        }
    }
    y
}

/// `y = x * a[c] + b[c]` per channel.
pub(crate) fn affine_per_channel(x: &mut [f32], s: Shape, a: &[f32], b: &[f32]) {
    let plane = s.spatial();
    for c in 0..s.c {
        for v in &mut x[c * plane..(c + 1) * plane] {
            *v = *v * a[c] + b[c];
        }
    }
}

pub(crate) fn relu(x: &mut [f32]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// Softmax across channels at every spatial position.
pub(crate) fn softmax(x: &mut [f32], s: Shape) {
    let plane = s.spatial();
    for p in 0..plane {
        let mut m = f32::NEG_INFINITY;
        for c in 0..s.c {
            m = m.max(x[c * plane + p]);
        }
        let mut sum = 0.0f32;
        for c in 0..s.c {
            let e = (x[c * plane + p] - m).exp();
            x[c * plane + p] = e;
            sum += e;
        }
        for c in 0..s.c {
            x[c * plane + p] /= sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[allow(clippy::too_many_arguments)]
    fn naive_conv(input: &[f32], s: Shape, w: &[f32], b: &[f32], k: usize, st: usize, p: usize, out: Shape) -> Vec<f32> {
        let mut y = vec![0.0; out.len()];
        for o in 0..out.c {
            for ox in 0..out.w {
                for oy in 0..out.h {
                    let mut acc = b[o] as f64;
                    for i in 0..s.c {
                        for kx in 0..k {
                            for ky in 0..k {
                                let ix = (ox * st + kx) as isize - p as isize;
                                let iy = (oy * st + ky) as isize - p as isize;
                                if ix >= 0 && iy >= 0 && (ix as usize) < s.w && (iy as usize) < s.h {
                                    acc += w[((o * s.c + i) * k + kx) * k + ky] as f64
                                        * input[(i * s.w + ix as usize) * s.h + iy as usize] as f64;
                                }
                            }
                        }
                    }
                    y[(o * out.w + ox) * out.h + oy] = acc as f32;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive() {
        for &(w, h, k, st, p) in &[(5, 4, 3, 1, 1), (7, 7, 3, 2, 1), (6, 5, 1, 1, 0), (8, 8, 7, 2, 3), (4, 4, 3, 1, 0)] {
            let s = Shape::new(2, w, h);
            let ow = (w + 2 * p - k) / st + 1;
            let oh = (h + 2 * p - k) / st + 1;
            let out = Shape::new(3, ow, oh);
            let input: Vec<f32> = (0..s.len()).map(|i| ((i * 13) % 7) as f32 - 3.0).collect();
            let weight: Vec<f32> = (0..3 * 2 * k * k).map(|i| ((i * 5) % 11) as f32 * 0.1 - 0.5).collect();
            let bias = vec![0.1, -0.2, 0.3];
            let got = conv2d(&input, s, &weight, &bias, k, st, p, out);
            let want = naive_conv(&input, s, &weight, &bias, k, st, p, out);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b} for {:?}", (w, h, k, st, p));
            }
        }
    }

    #[test]
    fn pooling_padding_rules() {
        let s = Shape::new(1, 2, 2);
        let x = [-1.0, -2.0, -3.0, -4.0];
        let out = Shape::new(1, 2, 2);
        // window 2, stride 1, pad 1: top-left window sees only x[0]
        assert_eq!(maxpool(&x, s, 2, 1, 1, out)[0], -1.0);
        assert_eq!(avgpool(&x, s, 2, 1, 1, out)[0], -0.25);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut x = [1.0, 2.0, 3.0, 0.0];
        softmax(&mut x, Shape::new(2, 1, 2));
        assert!((x[0] + x[2] - 1.0).abs() < 1e-6);
        assert!((x[1] + x[3] - 1.0).abs() < 1e-6);
    }
}
