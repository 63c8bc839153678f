//! Artist-disjoint 80/20 split, z-score scaling fitted on the train side and
//! seeded epoch batches.

use anyhow::Result;
use songpop::dataset::{epoch_batches, model_features, split_by_artist, FeatureScaler};
use songpop::synthetic::{synthetic_records, CorpusSpec};

fn main() -> Result<()> {
    let records = synthetic_records(&CorpusSpec {
        n_artists: 10,
        tracks_per_artist: 10,
        ..CorpusSpec::default()
    });
    let split = split_by_artist(&records, 0.8, 42)?;
    println!(
        "train {} tracks, test {} tracks (fraction {:.2})",
        split.train.len(),
        split.test.len(),
        split.train_fraction()
    );

    let scaler = FeatureScaler::fit(&split.train, &model_features(true))?;
    for ((f, m), s) in scaler.features.iter().zip(&scaler.mean).zip(&scaler.std).take(4) {
        println!("  {:<18} mean {m:>12.3}  std {s:>10.3}", f.name());
    }
    let z = scaler.transform(&split.test[0]);
    println!("first test track scaled: {:.3?}", &z[..4]);

    for epoch in 1..=2 {
        let batches = epoch_batches(split.train.len(), 32, 42, epoch, true)?;
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        println!("epoch {epoch}: batch sizes {sizes:?}, first index {}", batches[0][0]);
    }
    Ok(())
}
