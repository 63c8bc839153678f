//! Compare backpropagated gradients of a toy network with central finite
//! differences.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use songpop::nn::{mse_loss, NetConfig, PopularityNet, Sample};

fn loss(net: &PopularityNet, batch: &[&Sample]) -> Result<f64> {
    let preds = net.predict_batch(batch)?;
    let targets: Vec<f64> = batch.iter().map(|s| s.target).collect();
    Ok(mse_loss(&preds, &targets)?)
}

fn main() -> Result<()> {
    let cfg = NetConfig {
        conv_filters: vec![2, 2, 2, 2],
        meta_dim: 3,
        meta_hidden: vec![4],
        head_hidden: vec![4],
        input_mels: 16,
        input_frames: 16,
    };
    let mut net = PopularityNet::init(cfg, 11)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<Sample> = (0..3)
        .map(|_| Sample {
            audio: (0..256).map(|_| rng.gen_range(0.0..1.0)).collect(),
            meta: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            target: rng.gen_range(0.0..1.0),
        })
        .collect();
    let batch: Vec<&Sample> = samples.iter().collect();
    net.forward_batch(&batch)?;
    net.backward(&batch.iter().map(|s| s.target).collect::<Vec<_>>())?;

    let eps = 1e-4;
    let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
    for name in names {
        let (analytic, len) = {
            let params = net.named_params();
            let t = params.iter().find(|(n, _)| *n == name).unwrap().1;
            (t.grad.clone().unwrap(), t.len())
        };
        let mut worst: f64 = 0.0;
        for i in 0..len {
            let mut nudge = |d: f64| -> Result<f64> {
                for (n, t) in net.named_params_mut() {
                    if n == name {
                        t.data_mut()[i] += d;
                    }
                }
                loss(&net, &batch)
            };
            let plus = nudge(eps)?;
            let minus = nudge(-2.0 * eps)?;
            nudge(eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        println!("{name:<14} {len:>4} params  max relative error {worst:.2e}");
    }
    Ok(())
}
