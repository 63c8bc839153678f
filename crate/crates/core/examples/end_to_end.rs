//! Synthesize a 64-track corpus, train on it and score the held-out artists.
//!
//! `cargo run --release --example end_to_end -- [seed]`

use anyhow::Result;
use songpop::config::RunConfig;
use songpop::pipeline::{cmd_evaluate, cmd_train};
use songpop::synthetic::{write_corpus, CorpusSpec};

fn main() -> Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let dir = tempfile::tempdir()?;
    let corpus = write_corpus(dir.path(), &CorpusSpec { seed, ..CorpusSpec::default() })?;
    let cfg = RunConfig {
        catalog: Some(corpus.catalog),
        audio_dir: Some(corpus.audio_dir),
        out_dir: dir.path().join("out"),
        n_fft: 512,
        hop: 256,
        n_mels: 32,
        n_frames: 32,
        seed,
        ..RunConfig::default()
    };
    let summary = cmd_train(&cfg)?;
    for l in &summary.logs {
        println!("epoch {:>2}  train {:.5}  val {:.5}  mae {:.3}", l.epoch, l.train_loss, l.val_loss, l.val_mae);
    }
    println!("best epoch {} of {}", summary.best_epoch, summary.logs.len());
    let report = cmd_evaluate(&cfg, &summary.checkpoint)?;
    println!("held-out tracks {}  mae {:.3}  pearson {:?}", report.n, report.mae, report.pearson);
    Ok(())
}
