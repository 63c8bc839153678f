use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use songpop::config::RunConfig;
use songpop::pipeline::{self, CHECKPOINT_FILE, TRACKS_FILE};
use songpop::Error;

/// Song popularity prediction from mel spectrograms and catalog metadata.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a catalog fixture into the canonical tracks CSV.
    Ingest {
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Defaults to `<out>/tracks.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train and save the best checkpoint plus the epoch log.
    Train,
    /// Score the held-out artists.
    Evaluate {
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Feature correlations and the release month heatmap.
    Analyze,
    /// Predict popularity for one audio file.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        audio: PathBuf,
        /// Comma-separated `feature=value` pairs.
        #[arg(long)]
        meta: String,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    let default_ckpt = cfg.out_dir.join(CHECKPOINT_FILE);
    match cli.command {
        Command::Ingest { catalog, output } => {
            let catalog = catalog
                .or_else(|| cfg.catalog.clone())
                .context("no catalog given (use --catalog or the `catalog` key)")?;
            let output = output.unwrap_or_else(|| cfg.out_dir.join(TRACKS_FILE));
            let s = pipeline::cmd_ingest(&catalog, &output)?;
            println!("artists {}", s.artists);
            println!("tracks {}", s.tracks);
            println!("dropped_incomplete {}", s.dropped_incomplete);
        }
        Command::Train => {
            let s = pipeline::cmd_train(&cfg)?;
            println!(
                "best epoch {} of {} (val loss {:.6}); checkpoint {}",
                s.best_epoch,
                s.logs.len(),
                s.best_val_loss,
                s.checkpoint.display()
            );
        }
        Command::Evaluate { checkpoint, threshold } => {
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            let r = pipeline::cmd_evaluate(&cfg, &checkpoint.unwrap_or(default_ckpt))?;
            let show = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
            println!("n {}  mae {:.4}  pearson {}", r.n, r.mae, show(r.pearson));
            let c = &r.classification;
            println!(
                "threshold {}  accuracy {:.4}  precision {}  recall {}  f1 {}",
                c.threshold,
                c.accuracy,
                show(c.precision),
                show(c.recall),
                show(c.f1)
            );
        }
        Command::Analyze => {
            let a = pipeline::cmd_analyze(&cfg)?;
            for (name, r) in &a.correlation.rows {
                println!("{name:<18} {r:+.5}");
            }
        }
        Command::Predict { checkpoint, audio, meta } => {
            let p = pipeline::cmd_predict(&cfg, &checkpoint.unwrap_or(default_ckpt), &audio, &meta)?;
            println!("{p:?}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
