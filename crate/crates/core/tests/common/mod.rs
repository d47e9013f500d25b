//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use tivis_core::nn::{Conv2d, Dense, Layer, Model, PixelNorm};
use tivis_core::{ImageBuffer, Tensor};

pub type TestRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut TestRng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn random_vec(rng: &mut TestRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_image(rng: &mut TestRng, h: usize, w: usize) -> ImageBuffer {
    ImageBuffer::new(h, w, (0..h * w * 3).map(|_| rng.gen_range(0.0..255.0)).collect()).unwrap()
}

pub fn random_int_image(rng: &mut TestRng, h: usize, w: usize) -> ImageBuffer {
    ImageBuffer::new(h, w, (0..h * w * 3).map(|_| f64::from(rng.gen_range(0..=255u8))).collect())
        .unwrap()
}

pub fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class{i}")).collect()
}

/// A random small conv net on `size x size` inputs:
/// conv(3->c1) relu [maxpool] conv(c1->c2) relu (flatten | avgpool) dense(->k).
pub fn random_model(rng: &mut TestRng, size: usize, k: usize) -> Model {
    let c1 = rng.gen_range(2..=4);
    let c2 = rng.gen_range(2..=4);
    let k1 = [1, 3][rng.gen_range(0..2)];
    let pad1 = if k1 == 3 { rng.gen_range(0..=1) } else { 0 };
    let stride1 = rng.gen_range(1..=2);
    let mut layers = vec![
        Layer::Conv2d(Conv2d::new(
            random_tensor(rng, vec![c1, 3, k1, k1], 0.8),
            random_vec(rng, c1, 0.2),
            stride1,
            pad1,
        )),
        Layer::Relu,
    ];
    let mut s = (size + 2 * pad1 - k1) / stride1 + 1;
    if s >= 4 && rng.gen_bool(0.5) {
        layers.push(Layer::MaxPool2x2);
        s /= 2;
    }
    let pad2 = if s < 3 { 1 } else { rng.gen_range(0..=1) };
    layers.push(Layer::Conv2d(Conv2d::new(
        random_tensor(rng, vec![c2, c1, 3, 3], 0.6),
        random_vec(rng, c2, 0.2),
        1,
        pad2,
    )));
    layers.push(Layer::Relu);
    let s2 = s + 2 * pad2 - 2;
    let features = if rng.gen_bool(0.5) {
        layers.push(Layer::Flatten);
        c2 * s2 * s2
    } else {
        layers.push(Layer::AvgPoolGlobal);
        c2
    };
    layers.push(Layer::Dense(Dense::new(
        random_tensor(rng, vec![k, features], 1.0),
        random_vec(rng, k, 0.3),
    )));
    let norm = if rng.gen_bool(0.5) {
        PixelNorm::Unit01
    } else {
        PixelNorm::Signed11
    };
    Model::new(layers, [3, size, size], class_names(k), norm).unwrap()
}

/// Direct-summation reference forward pass, written independently of the
/// library's layer code. Returns the logits.
pub fn oracle_logits(model: &Model, image: &ImageBuffer) -> Vec<f64> {
    let norm = model.pixel_norm();
    let (h, w) = image.dims();
    // (c, y, x) nested vectors
    let mut x: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|c| {
            (0..h)
                .map(|y| (0..w).map(|xx| norm.normalize(image.get(y, xx, c))).collect())
                .collect()
        })
        .collect();
    let mut flat: Option<Vec<f64>> = None;
    for layer in model.layers() {
        match layer {
            Layer::Conv2d(conv) => {
                let wt = conv.weight.shape();
                let (co, ci, kh, kw) = (wt[0], wt[1], wt[2], wt[3]);
                let (ih, iw) = (x[0].len() as isize, x[0][0].len() as isize);
                let p = conv.padding as isize;
                let s = conv.stride as isize;
                let oh = ((ih + 2 * p - kh as isize) / s + 1) as usize;
                let ow = ((iw + 2 * p - kw as isize) / s + 1) as usize;
                let mut out = vec![vec![vec![0.0; ow]; oh]; co];
                for o in 0..co {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = conv.bias[o];
                            for i in 0..ci {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let iy = oy as isize * s + ky as isize - p;
                                        let ix = ox as isize * s + kx as isize - p;
                                        if iy < 0 || ix < 0 || iy >= ih || ix >= iw {
                                            continue;
                                        }
                                        let wv = conv.weight.data()[((o * ci + i) * kh + ky) * kw + kx];
                                        acc += wv * x[i][iy as usize][ix as usize];
                                    }
                                }
                            }
                            out[o][oy][ox] = acc;
                        }
                    }
                }
                x = out;
            }
            Layer::Relu => match flat.as_mut() {
                Some(f) => f.iter_mut().for_each(|v| *v = v.max(0.0)),
                None => x
                    .iter_mut()
                    .flatten()
                    .flatten()
                    .for_each(|v| *v = v.max(0.0)),
            },
            Layer::MaxPool2x2 => {
                x = x
                    .iter()
                    .map(|plane| {
                        (0..plane.len() / 2)
                            .map(|y| {
                                (0..plane[0].len() / 2)
                                    .map(|xx| {
                                        let a = plane[2 * y][2 * xx];
                                        let b = plane[2 * y][2 * xx + 1];
                                        let c = plane[2 * y + 1][2 * xx];
                                        let d = plane[2 * y + 1][2 * xx + 1];
                                        a.max(b).max(c).max(d)
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
            }
            Layer::AvgPoolGlobal => {
                flat = Some(
                    x.iter()
                        .map(|plane| {
                            let n = (plane.len() * plane[0].len()) as f64;
                            plane.iter().flatten().sum::<f64>() / n
                        })
                        .collect(),
                );
            }
            Layer::Flatten => {
                if flat.is_none() {
                    flat = Some(x.iter().flatten().flatten().copied().collect());
                }
            }
            Layer::Dense(d) => {
                let input = flat.take().expect("dense after flatten");
                let n = d.in_dim();
                flat = Some(
                    (0..d.out_dim())
                        .map(|o| {
                            let mut acc = d.bias[o];
                            for i in 0..n {
                                acc += d.weight.data()[o * n + i] * input[i];
                            }
                            acc
                        })
                        .collect(),
                );
            }
        }
    }
    flat.expect("model ends in a vector")
}
