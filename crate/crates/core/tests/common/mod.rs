//! Independent oracles: direct-loop DFT, convolution, pooling and dense
//! layers, a layer-by-layer forward pass and a finite-difference gradient
//! check. None of them call the library's kernels.

#![allow(dead_code)]

use std::f64::consts::PI;

use songpop::nn::{mse_loss, PopularityNet, Sample};

/// Naive DFT of one Hann-windowed frame: `(re, im)` for bins `0..=n/2`.
pub fn naive_dft_frame(frame: &[f64]) -> Vec<(f64, f64)> {
    let n = frame.len();
    let w: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, (&x, &wt)) in frame.iter().zip(&w).enumerate() {
                let ang = -2.0 * PI * (k * t % n) as f64 / n as f64;
                re += x * wt * ang.cos();
                im += x * wt * ang.sin();
            }
            (re, im)
        })
        .collect()
}

/// `[F][C][3][3]` same cross-correlation over `[C][H][W]`.
pub fn conv_oracle(input: &[f64], c: usize, h: usize, w: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let f_count = bias.len();
    let mut out = vec![0.0; f_count * h * w];
    for f in 0..f_count {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[f];
                for ch in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = y as isize + ky as isize - 1;
                            let ix = x as isize + kx as isize - 1;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += weight[((f * c + ch) * 3 + ky) * 3 + kx]
                                    * input[(ch * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out[(f * h + y) * w + x] = acc;
            }
        }
    }
    out
}

/// 2x2 stride-2 max over every window.
pub fn pool_oracle(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let cells = [
                    input[(ch * h + 2 * y) * w + 2 * x],
                    input[(ch * h + 2 * y) * w + 2 * x + 1],
                    input[(ch * h + 2 * y + 1) * w + 2 * x],
                    input[(ch * h + 2 * y + 1) * w + 2 * x + 1],
                ];
                out.push(cells.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    out
}

pub fn dense_oracle(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + x.iter().enumerate().map(|(i, v)| weight[o * x.len() + i] * v).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

/// Forward pass rebuilt from the network's named parameters.
pub fn forward_oracle(net: &PopularityNet, audio: &[f64], meta: &[f64]) -> f64 {
    let cfg = net.config().clone();
    let params = net.named_params();
    let get = |name: &str| params.iter().find(|(n, _)| n == name).unwrap().1.data().to_vec();
    let (mut c, mut h, mut w) = (1, cfg.input_mels, cfg.input_frames);
    let mut x = audio.to_vec();
    for (i, &f) in cfg.conv_filters.iter().enumerate() {
        x = relu(conv_oracle(&x, c, h, w, &get(&format!("conv{i}.weight")), &get(&format!("conv{i}.bias"))));
        x = pool_oracle(&x, f, h, w);
        c = f;
        h /= 2;
        w /= 2;
    }
    let mut m = meta.to_vec();
    for i in 0..cfg.meta_hidden.len() {
        m = relu(dense_oracle(&m, &get(&format!("meta{i}.weight")), &get(&format!("meta{i}.bias"))));
    }
    x.extend(m);
    let layers = cfg.head_hidden.len() + 1;
    for i in 0..layers {
        x = dense_oracle(&x, &get(&format!("head{i}.weight")), &get(&format!("head{i}.bias")));
        if i + 1 < layers {
            x = relu(x);
        }
    }
    x[0]
}

fn batch_loss(net: &PopularityNet, batch: &[&Sample]) -> f64 {
    let preds: Vec<f64> = batch.iter().map(|s| net.predict(&s.audio, &s.meta).unwrap()).collect();
    let targets: Vec<f64> = batch.iter().map(|s| s.target).collect();
    mse_loss(&preds, &targets).unwrap()
}

/// Worst relative error between backprop and central differences, per
/// parameter tensor. Relative error uses `max(|a|, |n|, floor)` as scale.
pub fn gradient_check(net: &mut PopularityNet, batch: &[&Sample], eps: f64, floor: f64) -> Vec<(String, f64)> {
    net.forward_batch(batch).unwrap();
    let targets: Vec<f64> = batch.iter().map(|s| s.target).collect();
    net.backward(&targets).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = net
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.grad.clone().unwrap()))
        .collect();
    let mut report = Vec::new();
    for (name, grad) in analytic {
        let mut worst: f64 = 0.0;
        for (i, &a) in grad.iter().enumerate() {
            let shift = |net: &mut PopularityNet, d: f64| {
                for (n, t) in net.named_params_mut() {
                    if n == name {
                        t.data_mut()[i] += d;
                    }
                }
            };
            shift(net, eps);
            let plus = batch_loss(net, batch);
            shift(net, -2.0 * eps);
            let minus = batch_loss(net, batch);
            shift(net, eps);
            let numeric = (plus - minus) / (2.0 * eps);
            let scale = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / scale);
        }
        report.push((name, worst));
    }
    report
}
