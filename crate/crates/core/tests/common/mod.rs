//! Independent reference implementations used as test oracles.
//!
//! Everything here works in `f64` with plain nested loops and shares no
//! code with the crate's kernels.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfscope::nn::{ConvLayer, Layer, NetworkSpec};
use rfscope::{Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    let data = (0..shape.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn random_conv(rng: &mut ChaCha8Rng, name: &str, in_ch: usize, out_ch: usize) -> ConvLayer {
    let w = (0..out_ch * in_ch * 9).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let b = (0..out_ch).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    ConvLayer::new(name, in_ch, out_ch, w, b).unwrap()
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Dense `f64` copy of a tensor, `[c][r][w]` flattened.
pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Six nested loops: zero-padded 3x3 cross-correlation, stride 1.
pub fn conv_oracle(x: &[f64], s: Shape, layer: &ConvLayer, bias: bool) -> Vec<f64> {
    let (h, w) = (s.height as isize, s.width as isize);
    let mut out = vec![0.0; layer.out_channels * s.plane()];
    for o in 0..layer.out_channels {
        for i in 0..h {
            for j in 0..w {
                let mut acc = if bias { layer.bias[o] as f64 } else { 0.0 };
                for c in 0..layer.in_channels {
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let (y, xx) = (i + ky - 1, j + kx - 1);
                            if y < 0 || y >= h || xx < 0 || xx >= w {
                                continue;
                            }
                            let v = x[(c * s.height + y as usize) * s.width + xx as usize];
                            acc += layer.weight(o, c, ky as usize, kx as usize) as f64 * v;
                        }
                    }
                }
                out[(o * s.height + i as usize) * s.width + j as usize] = acc;
            }
        }
    }
    out
}

/// The bias-free convolution as an explicit `(out*h*w) x (in*h*w)` matrix.
pub fn conv_matrix(layer: &ConvLayer, h: usize, w: usize) -> Vec<Vec<f64>> {
    let cols = layer.in_channels * h * w;
    let rows = layer.out_channels * h * w;
    let mut m = vec![vec![0.0; cols]; rows];
    for o in 0..layer.out_channels {
        for i in 0..h {
            for j in 0..w {
                let row = (o * h + i) * w + j;
                for c in 0..layer.in_channels {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let y = i as isize + ky as isize - 1;
                            let x = j as isize + kx as isize - 1;
                            if y < 0 || y >= h as isize || x < 0 || x >= w as isize {
                                continue;
                            }
                            let col = (c * h + y as usize) * w + x as usize;
                            m[row][col] += layer.weight(o, c, ky, kx) as f64;
                        }
                    }
                }
            }
        }
    }
    m
}

/// Max-pool oracle returning values and row-major-first argmax offsets.
pub fn maxpool_oracle(t: &Tensor) -> (Vec<f32>, Vec<u8>) {
    let s = t.shape();
    let mut vals = Vec::new();
    let mut idx = Vec::new();
    for c in 0..s.channels {
        for r in 0..s.height / 2 {
            for w in 0..s.width / 2 {
                let window = [
                    t.get(c, 2 * r, 2 * w),
                    t.get(c, 2 * r, 2 * w + 1),
                    t.get(c, 2 * r + 1, 2 * w),
                    t.get(c, 2 * r + 1, 2 * w + 1),
                ];
                let mut best = 0;
                for k in 1..4 {
                    if window[k] > window[best] {
                        best = k;
                    }
                }
                vals.push(window[best]);
                idx.push(best as u8);
            }
        }
    }
    (vals, idx)
}

/// Forward pass of the linearized network (identity for ReLU, 2x2 mean
/// pooling), biases included, up to layer `upto`, in `f64`.
pub fn linearized_forward(net: &NetworkSpec, image: &[f64], size: usize, upto: usize) -> (Vec<f64>, Shape) {
    let mut x = image.to_vec();
    let mut s = Shape::new(3, size, size);
    for layer in &net.layers()[..=upto] {
        match layer {
            Layer::Conv(c) => {
                x = conv_oracle(&x, s, c, true);
                s = Shape::new(c.out_channels, s.height, s.width);
            }
            Layer::Relu { .. } => {}
            Layer::Pool(_) => {
                let o = Shape::new(s.channels, s.height / 2, s.width / 2);
                let mut y = vec![0.0; o.len()];
                for c in 0..o.channels {
                    for r in 0..o.height {
                        for w in 0..o.width {
                            let at = |dr: usize, dw: usize| {
                                x[(c * s.height + 2 * r + dr) * s.width + 2 * w + dw]
                            };
                            y[(c * o.height + r) * o.width + w] =
                                0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
                        }
                    }
                }
                x = y;
                s = o;
            }
        }
    }
    (x, s)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}
