//! The fused audio + metadata regression network.
//!
//! Audio branch: four blocks of (3x3 same conv, ReLU, 2x2 max pool) over the
//! `1 x n_mels x n_frames` log-mel grid, then flatten. Metadata branch: a
//! small MLP with ReLU after every layer. The two feature vectors are
//! concatenated (audio first) and passed through the head, which has ReLU
//! between layers and a linear scalar output.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::layers::{
    concat_features, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    maxpool2, maxpool2_backward, relu, relu_backward, split_gradient, KERNEL,
};
use crate::nn::Tensor;
use crate::spectrogram::MelSpectrogram;

/// Samples whose gradients are summed sequentially before the chunk totals
/// are combined; fixed so results do not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub conv_filters: Vec<usize>,
    pub meta_dim: usize,
    pub meta_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub input_mels: usize,
    pub input_frames: usize,
}

impl NetConfig {
    /// Four conv blocks of 16, 32, 64 and 128 filters; metadata MLP
    /// `meta_dim -> 32 -> 32`; head `-> 128 -> 64 -> 1`.
    pub fn standard(meta_dim: usize, input_mels: usize, input_frames: usize) -> Self {
        Self {
            conv_filters: vec![16, 32, 64, 128],
            meta_dim,
            meta_hidden: vec![32, 32],
            head_hidden: vec![128, 64],
            input_mels,
            input_frames,
        }
    }

    fn downsample(&self) -> usize {
        1 << self.conv_filters.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return Err(Error::Config("conv_filters must be non-empty and positive".into()));
        }
        if self.conv_filters.len() > 16 {
            return Err(Error::Config("too many conv blocks".into()));
        }
        if self.meta_dim == 0 {
            return Err(Error::Config("meta_dim must be positive".into()));
        }
        if self.meta_hidden.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let d = self.downsample();
        if self.input_mels == 0
            || self.input_frames == 0
            || !self.input_mels.is_multiple_of(d)
            || !self.input_frames.is_multiple_of(d)
        {
            return Err(Error::Config(format!(
                "input {}x{} must be a positive multiple of {d} in both dimensions",
                self.input_mels, self.input_frames
            )));
        }
        Ok(())
    }

    /// Width of the flattened audio feature vector.
    pub fn flatten_width(&self) -> usize {
        let d = self.downsample();
        self.conv_filters.last().copied().unwrap_or(0)
            * (self.input_mels / d)
            * (self.input_frames / d)
    }

    pub fn meta_out_width(&self) -> usize {
        self.meta_hidden.last().copied().unwrap_or(self.meta_dim)
    }

    pub fn audio_len(&self) -> usize {
        self.input_mels * self.input_frames
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// One network input: a flattened `n_mels x n_frames` grid, scaled
/// metadata, and the normalized target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub audio: Vec<f64>,
    pub meta: Vec<f64>,
    pub target: f64,
}

struct BlockTrace {
    input: Tensor,
    pre: Vec<f64>,
    argmax: Vec<usize>,
}

struct DenseTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
}

/// Everything backward needs from one forward pass.
struct Trace {
    blocks: Vec<BlockTrace>,
    meta: Vec<DenseTrace>,
    head: Vec<DenseTrace>,
    audio_width: usize,
    prediction: f64,
}

#[derive(Debug, Clone)]
pub struct PopularityNet {
    config: NetConfig,
    pub convs: Vec<ConvBlock>,
    pub meta: Vec<DenseLayer>,
    pub head: Vec<DenseLayer>,
    tape: Option<Tape>,
}

/// Traces retained between `forward_batch` and `backward`.
#[derive(Clone)]
struct Tape(std::sync::Arc<Vec<Trace>>);

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tape({} samples)", self.0.len())
    }
}

impl PartialEq for PopularityNet {
    /// Compares configuration and parameter values; gradients and any
    /// retained tape are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self
                .named_params()
                .iter()
                .zip(other.named_params())
                .all(|((_, a), (_, b))| a.shape() == b.shape() && a.data() == b.data())
    }
}

fn dense_shapes(input: usize, widths: &[usize]) -> Vec<(usize, usize)> {
    let mut shapes = Vec::with_capacity(widths.len());
    let mut prev = input;
    for &w in widths {
        shapes.push((w, prev));
        prev = w;
    }
    shapes
}

impl PopularityNet {
    /// All parameters zero.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for &f in &config.conv_filters {
            convs.push(ConvBlock {
                weight: Tensor::zeros(vec![f, in_ch, KERNEL, KERNEL]),
                bias: Tensor::zeros(vec![f]),
            });
            in_ch = f;
        }
        let dense = |shapes: Vec<(usize, usize)>| {
            shapes
                .into_iter()
                .map(|(o, i)| DenseLayer {
                    weight: Tensor::zeros(vec![o, i]),
                    bias: Tensor::zeros(vec![o]),
                })
                .collect::<Vec<_>>()
        };
        let meta = dense(dense_shapes(config.meta_dim, &config.meta_hidden));
        let mut head_widths = config.head_hidden.clone();
        head_widths.push(1);
        let head = dense(dense_shapes(
            config.flatten_width() + config.meta_out_width(),
            &head_widths,
        ));
        Ok(Self {
            config,
            convs,
            meta,
            head,
            tape: None,
        })
    }

    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases,
    /// drawn in parameter declaration order from a seeded ChaCha stream.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, t) in net.named_params_mut() {
            if t.shape().len() < 2 {
                continue;
            }
            let fan_in: usize = t.shape()[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for v in t.data_mut() {
                *v = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Parameters in declaration order with stable names.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &c.weight));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        for (prefix, layers) in [("meta", &self.meta), ("head", &self.head)] {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{prefix}{i}.weight"), &l.weight));
                out.push((format!("{prefix}{i}.bias"), &l.bias));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("conv{i}.weight"), &mut c.weight));
            out.push((format!("conv{i}.bias"), &mut c.bias));
        }
        for (prefix, layers) in [("meta", &mut self.meta), ("head", &mut self.head)] {
            for (i, l) in layers.iter_mut().enumerate() {
                out.push((format!("{prefix}{i}.weight"), &mut l.weight));
                out.push((format!("{prefix}{i}.bias"), &mut l.bias));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.named_params_mut() {
            t.grad = None;
        }
    }

    fn check_inputs(&self, audio: &[f64], meta: &[f64]) -> Result<()> {
        if audio.len() != self.config.audio_len() {
            return Err(Error::Shape(format!(
                "audio input has {} cells, network expects {}x{}",
                audio.len(),
                self.config.input_mels,
                self.config.input_frames
            )));
        }
        if meta.len() != self.config.meta_dim {
            return Err(Error::Shape(format!(
                "metadata has {} features, network expects {}",
                meta.len(),
                self.config.meta_dim
            )));
        }
        Ok(())
    }

    fn trace(&self, audio: &[f64], meta: &[f64]) -> Result<Trace> {
        self.check_inputs(audio, meta)?;
        let cfg = &self.config;
        let mut x = Tensor::new(vec![1, cfg.input_mels, cfg.input_frames], audio.to_vec())?;
        let mut blocks = Vec::with_capacity(self.convs.len());
        for block in &self.convs {
            let pre = conv2d_forward(&x, &block.weight, &block.bias)?;
            let pooled = maxpool2(&relu(&pre))?;
            blocks.push(BlockTrace {
                input: x,
                pre: pre.into_data(),
                argmax: pooled.argmax,
            });
            x = pooled.output;
        }
        let audio_feat = x.into_data();
        let audio_width = audio_feat.len();

        let mut m = meta.to_vec();
        let mut meta_trace = Vec::with_capacity(self.meta.len());
        for layer in &self.meta {
            let pre = dense_forward(&m, &layer.weight, &layer.bias)?;
            let next = pre.iter().map(|v| v.max(0.0)).collect();
            meta_trace.push(DenseTrace { input: m, pre });
            m = next;
        }

        let mut h = concat_features(&audio_feat, &m)?;
        let mut head_trace = Vec::with_capacity(self.head.len());
        let last = self.head.len() - 1;
        for (i, layer) in self.head.iter().enumerate() {
            let pre = dense_forward(&h, &layer.weight, &layer.bias)?;
            let next = if i == last {
                pre.clone()
            } else {
                pre.iter().map(|v| v.max(0.0)).collect()
            };
            head_trace.push(DenseTrace { input: h, pre });
            h = next;
        }
        Ok(Trace {
            blocks,
            meta: meta_trace,
            head: head_trace,
            audio_width,
            prediction: h[0],
        })
    }

    /// Per-parameter gradients of `d_pred * prediction`, in declaration order.
    fn trace_backward(&self, trace: &Trace, d_pred: f64) -> Result<Vec<Vec<f64>>> {
        let n_conv = self.convs.len();
        let n_meta = self.meta.len();
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); 2 * (n_conv + n_meta + self.head.len())];
        let head_base = 2 * (n_conv + n_meta);
        let meta_base = 2 * n_conv;

        let mut g = vec![d_pred];
        let last = self.head.len() - 1;
        for (i, (layer, t)) in self.head.iter().zip(&trace.head).enumerate().rev() {
            if i != last {
                g = relu_backward(&t.pre, &g);
            }
            let d = dense_backward(&t.input, &layer.weight, &g);
            grads[head_base + 2 * i] = d.weight;
            grads[head_base + 2 * i + 1] = d.bias;
            g = d.input;
        }
        let (g_audio, g_meta) = split_gradient(&g, trace.audio_width);

        let mut gm = g_meta.to_vec();
        for (i, (layer, t)) in self.meta.iter().zip(&trace.meta).enumerate().rev() {
            gm = relu_backward(&t.pre, &gm);
            let d = dense_backward(&t.input, &layer.weight, &gm);
            grads[meta_base + 2 * i] = d.weight;
            grads[meta_base + 2 * i + 1] = d.bias;
            gm = d.input;
        }

        let mut ga = g_audio.to_vec();
        for (i, (block, t)) in self.convs.iter().zip(&trace.blocks).enumerate().rev() {
            let g_act = maxpool2_backward(t.pre.len(), &t.argmax, &ga);
            let g_pre = relu_backward(&t.pre, &g_act);
            let d = conv2d_backward(&t.input, &block.weight, &g_pre)?;
            grads[2 * i] = d.weight;
            grads[2 * i + 1] = d.bias;
            ga = d.input;
        }
        Ok(grads)
    }

    /// Scalar prediction in normalized target units.
    pub fn forward(&self, spec: &MelSpectrogram, meta: &[f64]) -> Result<f64> {
        if spec.n_mels != self.config.input_mels || spec.n_frames != self.config.input_frames {
            return Err(Error::Shape(format!(
                "spectrogram is {}x{}, network expects {}x{}",
                spec.n_mels, spec.n_frames, self.config.input_mels, self.config.input_frames
            )));
        }
        self.predict(&spec.values, meta)
    }

    /// Like [`forward`](Self::forward) on a flattened `n_mels x n_frames` grid.
    pub fn predict(&self, audio: &[f64], meta: &[f64]) -> Result<f64> {
        Ok(self.trace(audio, meta)?.prediction)
    }

    pub fn predict_batch(&self, samples: &[&Sample]) -> Result<Vec<f64>> {
        samples
            .par_iter()
            .map(|s| self.predict(&s.audio, &s.meta))
            .collect()
    }

    /// Forward a batch and retain what [`backward`](Self::backward) needs.
    pub fn forward_batch(&mut self, samples: &[&Sample]) -> Result<Vec<f64>> {
        let traces: Vec<Trace> = samples
            .par_iter()
            .map(|s| self.trace(&s.audio, &s.meta))
            .collect::<Result<_>>()?;
        let preds = traces.iter().map(|t| t.prediction).collect();
        self.tape = Some(Tape(std::sync::Arc::new(traces)));
        Ok(preds)
    }

    /// Mean squared error against `targets` for the batch seen by the last
    /// `forward_batch`; fills every parameter's gradient.
    pub fn backward(&mut self, targets: &[f64]) -> Result<f64> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        let traces = &tape.0;
        if traces.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} targets for a batch of {}",
                targets.len(),
                traces.len()
            )));
        }
        let preds: Vec<f64> = traces.iter().map(|t| t.prediction).collect();
        let loss = mse_loss(&preds, targets)?;
        let n = traces.len() as f64;
        let items: Vec<(&Trace, f64)> = traces
            .iter()
            .zip(targets)
            .map(|(t, &y)| (t, 2.0 * (t.prediction - y) / n))
            .collect();
        let (grads, _) =
            self.reduce_grads(&items, |(t, d)| Ok((self.trace_backward(t, *d)?, t.prediction)))?;
        self.install_grads(grads)?;
        Ok(loss)
    }

    /// Forward and backward in one pass without retaining a tape; returns
    /// the batch loss and predictions. Used by the trainer.
    pub fn accumulate_gradients(&mut self, samples: &[&Sample]) -> Result<(f64, Vec<f64>)> {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let (grads, preds) = self.reduce_grads(samples, |s| {
            let t = self.trace(&s.audio, &s.meta)?;
            let g = self.trace_backward(&t, 2.0 * (t.prediction - s.target) / n)?;
            Ok((g, t.prediction))
        })?;
        let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
        let loss = mse_loss(&preds, &targets)?;
        self.install_grads(grads)?;
        Ok((loss, preds))
    }

    /// Sum per-item gradients in a fixed order; also returns each item's
    /// scalar output in input order.
    fn reduce_grads<T: Sync>(
        &self,
        items: &[T],
        per_item: impl Fn(&T) -> Result<(Vec<Vec<f64>>, f64)> + Sync,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let partials: Vec<(Vec<Vec<f64>>, Vec<f64>)> = items
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut acc: Option<Vec<Vec<f64>>> = None;
                let mut outs = Vec::with_capacity(chunk.len());
                for item in chunk {
                    let (g, out) = per_item(item)?;
                    outs.push(out);
                    match &mut acc {
                        None => acc = Some(g),
                        Some(a) => add_into(a, &g),
                    }
                }
                Ok((acc.expect("chunks are non-empty"), outs))
            })
            .collect::<Result<_>>()?;
        let mut it = partials.into_iter();
        let (mut total, mut outs) =
            it.next().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        for (g, o) in it {
            add_into(&mut total, &g);
            outs.extend(o);
        }
        Ok((total, outs))
    }

    fn install_grads(&mut self, grads: Vec<Vec<f64>>) -> Result<()> {
        for ((_, t), g) in self.named_params_mut().into_iter().zip(grads) {
            t.set_grad(g)?;
        }
        Ok(())
    }
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Mean squared error.
pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::InvalidInput(format!(
            "mse over {} predictions and {} targets",
            preds.len(),
            targets.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_config() -> NetConfig {
        NetConfig {
            conv_filters: vec![2, 2, 2, 2],
            meta_dim: 3,
            meta_hidden: vec![4],
            head_hidden: vec![5],
            input_mels: 16,
            input_frames: 16,
        }
    }

    fn random_sample(rng: &mut ChaCha8Rng, cfg: &NetConfig) -> Sample {
        Sample {
            audio: (0..cfg.audio_len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            meta: (0..cfg.meta_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            target: rng.gen_range(0.0..1.0),
        }
    }

    #[test]
    fn standard_shape_arithmetic() {
        let cfg = NetConfig::standard(14, 128, 256);
        cfg.validate().unwrap();
        assert_eq!(cfg.flatten_width(), 128 * 8 * 16);
        assert_eq!(cfg.flatten_width(), 16_384);
        let net = PopularityNet::zeros(cfg).unwrap();
        assert_eq!(net.head[0].weight.shape(), &[128, 16_384 + 32]);
        assert_eq!(net.convs[3].weight.shape(), &[128, 64, 3, 3]);
    }

    #[test]
    fn config_rejects_indivisible_input() {
        let mut cfg = NetConfig::standard(14, 120, 256);
        assert!(cfg.validate().is_err());
        cfg.input_mels = 128;
        cfg.input_frames = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_network_predicts_zero() {
        let cfg = toy_config();
        let net = PopularityNet::zeros(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = random_sample(&mut rng, &cfg);
        assert_eq!(net.predict(&s.audio, &s.meta).unwrap(), 0.0);
    }

    #[test]
    fn forward_rejects_wrong_dims() {
        let cfg = toy_config();
        let net = PopularityNet::zeros(cfg).unwrap();
        assert!(matches!(net.predict(&[0.0; 10], &[0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(net.predict(&[0.0; 256], &[0.0; 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn init_is_seeded() {
        let a = PopularityNet::init(toy_config(), 7).unwrap();
        let b = PopularityNet::init(toy_config(), 7).unwrap();
        let c = PopularityNet::init(toy_config(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.named_params().iter().filter(|(n, _)| n.ends_with("bias")).all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_std_matches_he_uniform() {
        // head layer 0 of this config has fan-in 1000 and 64 * 1000 weights
        let cfg = NetConfig {
            conv_filters: vec![2],
            meta_dim: 998,
            meta_hidden: vec![],
            head_hidden: vec![64],
            input_mels: 2,
            input_frames: 2,
        };
        assert_eq!(cfg.flatten_width() + cfg.meta_out_width(), 1000);
        let net = PopularityNet::init(cfg, 3).unwrap();
        let w = net.head[0].weight.data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let expected = (2.0f64 / 1000.0).sqrt();
        assert!((std - expected).abs() / expected < 0.15, "std {std} vs {expected}");
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = PopularityNet::init(toy_config(), 1).unwrap();
        assert!(matches!(net.backward(&[0.5]), Err(Error::State(_))));
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[1.0], &[0.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let cfg = toy_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = PopularityNet::init(cfg.clone(), 2).unwrap();
        let mut s = random_sample(&mut rng, &cfg);
        s.target = net.predict(&s.audio, &s.meta).unwrap();
        let preds = net.forward_batch(&[&s]).unwrap();
        let loss = net.backward(&[s.target]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(preds[0], s.target);
        for (_, t) in net.named_params() {
            assert!(t.grad.as_ref().unwrap().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn tape_and_fused_paths_agree() {
        let cfg = toy_config();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let samples: Vec<Sample> = (0..7).map(|_| random_sample(&mut rng, &cfg)).collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let mut a = PopularityNet::init(cfg.clone(), 4).unwrap();
        let mut b = a.clone();
        a.forward_batch(&refs).unwrap();
        let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
        let la = a.backward(&targets).unwrap();
        let (lb, _) = b.accumulate_gradients(&refs).unwrap();
        assert_eq!(la, lb);
        for ((_, ta), (_, tb)) in a.named_params().iter().zip(b.named_params()) {
            assert_eq!(ta.grad, tb.grad);
        }
    }
}
