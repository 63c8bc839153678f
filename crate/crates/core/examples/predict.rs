//! Train briefly on a synthetic corpus, then predict one track from its
//! audio file and metadata row, as the `predict` command does.

use anyhow::Result;
use songpop::config::RunConfig;
use songpop::dataset::Feature;
use songpop::pipeline::{cmd_predict, cmd_train};
use songpop::synthetic::{write_corpus, CorpusSpec};

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let corpus = write_corpus(dir.path(), &CorpusSpec::default())?;
    let cfg = RunConfig {
        catalog: Some(corpus.catalog.clone()),
        audio_dir: Some(corpus.audio_dir.clone()),
        out_dir: dir.path().join("out"),
        n_fft: 512,
        hop: 256,
        n_mels: 32,
        n_frames: 32,
        max_epochs: 10,
        ..RunConfig::default()
    };
    let summary = cmd_train(&cfg)?;

    let track = &corpus.records[0];
    let meta: Vec<String> = Feature::ALL
        .iter()
        .map(|&f| format!("{}={}", f.name(), track.feature(f)))
        .collect();
    let p = cmd_predict(&cfg, &summary.checkpoint, &corpus.audio_dir.join(&track.audio_path), &meta.join(","))?;
    println!("{}: actual {:.1}, predicted {p:.1}", track.track_id, track.popularity);
    Ok(())
}
