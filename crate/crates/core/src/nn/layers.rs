//! Layer kernels with their hand-derived backward passes.
//!
//! Convolution is cross-correlation (no kernel flip) with a 3x3 kernel,
//! stride 1 and one cell of zero padding, so spatial size is preserved.

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const KERNEL: usize = 3;

/// Valid output range along one axis for kernel offset `k`.
#[inline]
fn valid_range(k: usize, len: usize) -> (usize, usize) {
    // input index = out index + k - 1
    match k {
        0 => (1, len),
        1 => (0, len),
        _ => (0, len.saturating_sub(1)),
    }
}

fn check_conv(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (c, h, w) = input.chw()?;
    if h == 0 || w == 0 {
        return Err(Error::Shape("convolution input must be at least 1x1".into()));
    }
    let f = match weight.shape()[..] {
        [f, wc, KERNEL, KERNEL] if wc == c => f,
        _ => {
            return Err(Error::Shape(format!(
                "weights {:?} do not fit input with {c} channels and a 3x3 kernel",
                weight.shape()
            )))
        }
    };
    if bias.shape() != [f] {
        return Err(Error::Shape(format!("bias {:?} for {f} filters", bias.shape())));
    }
    Ok((c, h, w, f))
}

/// Same-padded 3x3 convolution: `[C x H x W] -> [F x H x W]`.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w, f) = check_conv(input, weight, bias)?;
    let x = input.data();
    let wt = weight.data();
    let plane = h * w;
    let mut out = vec![0.0; f * plane];
    for (fi, out_plane) in out.chunks_exact_mut(plane).enumerate() {
        out_plane.fill(bias.data()[fi]);
        for ci in 0..c {
            let in_plane = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..KERNEL {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..KERNEL {
                    let (x0, x1) = valid_range(kx, w);
                    let k = wt[((fi * c + ci) * KERNEL + ky) * KERNEL + kx];
                    if k == 0.0 || x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let src_row = (y + ky - 1) * w;
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        let src = &in_plane[src_row + x0 + kx - 1..src_row + x1 + kx - 1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += k * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![f, h, w], out)
}

pub struct ConvGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a same-padded convolution given `d loss / d output`.
pub fn conv2d_backward(input: &Tensor, weight: &Tensor, grad_out: &[f64]) -> Result<ConvGrads> {
    let (c, h, w) = input.chw()?;
    let f = weight.shape()[0];
    let plane = h * w;
    if grad_out.len() != f * plane {
        return Err(Error::Shape(format!(
            "output gradient of length {} for {f} x {h} x {w}",
            grad_out.len()
        )));
    }
    let x = input.data();
    let wt = weight.data();
    let mut d_input = vec![0.0; c * plane];
    let mut d_weight = vec![0.0; wt.len()];
    let d_bias = grad_out.chunks_exact(plane).map(|g| g.iter().sum()).collect();

    for (fi, g_plane) in grad_out.chunks_exact(plane).enumerate() {
        for ci in 0..c {
            let in_plane = &x[ci * plane..(ci + 1) * plane];
            let din_plane = &mut d_input[ci * plane..(ci + 1) * plane];
            for ky in 0..KERNEL {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..KERNEL {
                    let (x0, x1) = valid_range(kx, w);
                    if x0 >= x1 {
                        continue;
                    }
                    let widx = ((fi * c + ci) * KERNEL + ky) * KERNEL + kx;
                    let k = wt[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src_row = (y + ky - 1) * w;
                        let g = &g_plane[y * w + x0..y * w + x1];
                        let s = &in_plane[src_row + x0 + kx - 1..src_row + x1 + kx - 1];
                        acc += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        let di = &mut din_plane[src_row + x0 + kx - 1..src_row + x1 + kx - 1];
                        for (d, gv) in di.iter_mut().zip(g) {
                            *d += k * gv;
                        }
                    }
                    d_weight[widx] += acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}

pub fn relu(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Mask `grad_out` by the sign of the pre-activation values.
pub fn relu_backward(pre: &[f64], grad_out: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(grad_out)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

/// Result of a 2x2 stride-2 max pool; `argmax[i]` is the flat input index
/// that produced output cell `i`.
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Non-overlapping 2x2 max pool. Odd trailing rows/columns are dropped.
pub fn maxpool2(t: &Tensor) -> Result<Pooled> {
    let (c, h, w) = t.chw()?;
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("max pool needs H, W >= 2, got {h} x {w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = t.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![c, oh, ow], out)?,
        argmax,
    })
}

/// Route pooled gradients back to the winning input cells.
pub fn maxpool2_backward(input_len: usize, argmax: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        d[idx] += g;
    }
    d
}

/// `y = W x + b` with `W` shaped `[out x in]`.
pub fn dense_forward(x: &[f64], weight: &Tensor, bias: &Tensor) -> Result<Vec<f64>> {
    let (out, inp) = match weight.shape()[..] {
        [o, i] => (o, i),
        _ => return Err(Error::Shape(format!("dense weights must be 2-D, got {:?}", weight.shape()))),
    };
    if x.len() != inp {
        return Err(Error::Shape(format!("dense layer expects {inp} inputs, got {}", x.len())));
    }
    if bias.shape() != [out] {
        return Err(Error::Shape(format!("bias {:?} for {out} outputs", bias.shape())));
    }
    Ok(weight
        .data()
        .chunks_exact(inp)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect())
}

pub struct DenseGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn dense_backward(x: &[f64], weight: &Tensor, grad_out: &[f64]) -> DenseGrads {
    let inp = x.len();
    let mut d_input = vec![0.0; inp];
    let mut d_weight = vec![0.0; weight.len()];
    for ((row, d_row), &g) in weight
        .data()
        .chunks_exact(inp)
        .zip(d_weight.chunks_exact_mut(inp))
        .zip(grad_out)
    {
        if g == 0.0 {
            continue;
        }
        for ((di, dw), (&w, &v)) in d_input.iter_mut().zip(d_row).zip(row.iter().zip(x)) {
            *di += w * g;
            *dw = v * g;
        }
    }
    DenseGrads {
        input: d_input,
        weight: d_weight,
        bias: grad_out.to_vec(),
    }
}

/// Audio features first, metadata second.
pub fn concat_features(audio: &[f64], meta: &[f64]) -> Result<Vec<f64>> {
    if audio.is_empty() || meta.is_empty() {
        return Err(Error::InvalidInput("cannot concatenate an empty feature vector".into()));
    }
    let mut v = Vec::with_capacity(audio.len() + meta.len());
    v.extend_from_slice(audio);
    v.extend_from_slice(meta);
    Ok(v)
}

/// Split a gradient over a concatenated vector back into its two sources.
pub fn split_gradient(grad: &[f64], audio_len: usize) -> (&[f64], &[f64]) {
    grad.split_at(audio_len)
}
