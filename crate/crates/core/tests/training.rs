use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use songpop::nn::{NetConfig, PopularityNet, Sample};
use songpop::training::{train, validate, TrainingConfig};

fn config() -> NetConfig {
    NetConfig {
        conv_filters: vec![4, 4, 4, 4],
        meta_dim: 2,
        meta_hidden: vec![8],
        head_hidden: vec![16],
        input_mels: 16,
        input_frames: 16,
    }
}

/// Popularity is linear in danceability (meta[0]).
fn samples(seed: u64, n: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let dance: f64 = rng.gen_range(0.0..1.0);
            Sample {
                audio: (0..256).map(|_| rng.gen_range(0.0..1.0)).collect(),
                meta: vec![dance * 2.0 - 1.0, rng.gen_range(-1.0..1.0)],
                target: 0.2 + 0.6 * dance,
            }
        })
        .collect()
}

#[test]
fn eight_samples_overfit_within_500_steps() {
    let data = samples(1, 8);
    let cfg = TrainingConfig {
        batch_size: 8,
        max_epochs: 500,
        patience: 500,
        seed: 3,
        ..TrainingConfig::default()
    };
    let out = train(PopularityNet::init(config(), 3).unwrap(), &data, &data, &cfg, |_, _| Ok(())).unwrap();
    let first = out.logs.iter().find(|l| l.train_loss < 1e-2).map(|l| l.epoch);
    println!("first epoch under 1e-2: {first:?}");
    assert!(first.is_some_and(|e| e <= 500));
}

#[test]
fn seeded_runs_repeat_exactly() {
    let (tr, va) = (samples(2, 40), samples(3, 10));
    let cfg = TrainingConfig {
        batch_size: 8,
        max_epochs: 6,
        seed: 9,
        ..TrainingConfig::default()
    };
    let run = || train(PopularityNet::init(config(), 9).unwrap(), &tr, &va, &cfg, |_, _| Ok(())).unwrap();
    let (a, b) = (run(), run());
    let strip = |o: &songpop::training::TrainOutcome| {
        o.logs.iter().map(|l| (l.epoch, l.train_loss, l.val_loss, l.val_mae)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.net, b.net);
}

#[test]
fn returned_model_is_the_best_checkpoint() {
    let (tr, va) = (samples(4, 32), samples(5, 8));
    let cfg = TrainingConfig {
        batch_size: 4,
        max_epochs: 12,
        patience: 3,
        seed: 1,
        ..TrainingConfig::default()
    };
    let mut saved = Vec::new();
    let out = train(PopularityNet::init(config(), 1).unwrap(), &tr, &va, &cfg, |net, epoch| {
        saved.push((epoch, net.clone()));
        Ok(())
    })
    .unwrap();
    let (loss, _) = validate(&out.net, &va).unwrap();
    assert_eq!(loss, out.best_val_loss);
    let min = out.logs.iter().map(|l| l.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(loss, min);
    let (last_epoch, last_net) = saved.last().unwrap();
    assert_eq!(*last_epoch, out.best_epoch);
    assert_eq!(last_net, &out.net);
    assert!(out.logs.len() <= 12);
    // best loss never rises across saved checkpoints
    let losses: Vec<f64> = saved.iter().map(|(e, _)| out.logs[e - 1].val_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]));
}
