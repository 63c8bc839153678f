//! The five commands: ingest, train, evaluate, analyze, predict. Each
//! writes only under the configured output directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::audio::{fit_length, read_wav, resample};
use crate::config::RunConfig;
use crate::dataset::{
    clean_records, load_catalog_json, load_tracks_csv, save_tracks_csv, split_by_artist, Feature,
    FeatureScaler, TrackRecord,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    comparison_csv, correlation_report, error_histogram, evaluate_predictions,
    monthly_popularity_heatmap, CorrelationTable, EvaluationReport, HeatmapGrid, Histogram,
};
use crate::nn::{Checkpoint, ParamBlock, PopularityNet, Sample};
use crate::spectrogram::{load_feature_dump, mel_filterbank, mel_spectrogram_with, save_feature_dump, MelSpectrogram};
use crate::training::{epoch_log_csv, train, EpochLog, TARGET_SCALE};

pub const TRACKS_FILE: &str = "tracks.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const REPORT_FILE: &str = "report.json";
pub const COMPARISON_FILE: &str = "predictions.csv";
pub const HISTOGRAM_FILE: &str = "error_histogram.csv";
pub const CORRELATION_FILE: &str = "correlation.csv";
pub const HEATMAP_FILE: &str = "heatmap.csv";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub artists: usize,
    pub tracks: usize,
    pub dropped_incomplete: usize,
}

/// Load a catalog fixture, clean it and write the canonical tracks CSV.
pub fn cmd_ingest(catalog: &Path, out_csv: &Path) -> Result<IngestSummary> {
    let loaded = load_catalog_json(catalog)?;
    let records = clean_records(loaded.records);
    if let Some(parent) = out_csv.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_tracks_csv(out_csv, &records)?;
    Ok(IngestSummary {
        artists: loaded.artists,
        tracks: records.len(),
        dropped_incomplete: loaded.dropped_incomplete,
    })
}

/// Records from `tracks_csv`, falling back to `catalog`.
pub fn load_records(cfg: &RunConfig) -> Result<Vec<TrackRecord>> {
    if cfg.tracks_csv.is_some() {
        let path = cfg.require_path("tracks_csv", &cfg.tracks_csv)?;
        return Ok(clean_records(load_tracks_csv(path)?.records));
    }
    if cfg.catalog.is_some() {
        let path = cfg.require_path("catalog", &cfg.catalog)?;
        return Ok(clean_records(load_catalog_json(path)?.records));
    }
    Err(Error::Config("key `tracks_csv`: one of tracks_csv or catalog is required".into()))
}

/// Map dB cells from `[floor_db, 0]` onto `[0, 1]`.
pub fn audio_input(spec: &MelSpectrogram) -> Vec<f64> {
    let floor = spec.config.floor_db;
    spec.values.iter().map(|v| (v - floor) / -floor).collect()
}

fn cache_name(track_id: &str, digest: &str) -> String {
    let safe: String = track_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}-{digest}.spmel")
}

/// Decode, resample and length-fit one file, then compute its spectrogram.
pub fn spectrogram_for_file(cfg: &RunConfig, path: &Path) -> Result<MelSpectrogram> {
    let spec_cfg = cfg.spectrogram();
    let bank = mel_filterbank(&spec_cfg, cfg.sample_rate)?;
    let clip = fit_length(&resample(&read_wav(path)?, cfg.sample_rate)?, cfg.clip_samples())?;
    mel_spectrogram_with(&clip, &spec_cfg, &bank)
}

/// Spectrograms for `records` in order, read from or written to the
/// feature cache. Runs on at most `workers` threads.
pub fn extract_features(cfg: &RunConfig, records: &[TrackRecord]) -> Result<Vec<MelSpectrogram>> {
    let audio_dir = cfg.require_path("audio_dir", &cfg.audio_dir)?;
    let spec_cfg = cfg.spectrogram();
    spec_cfg.validate(cfg.sample_rate)?;
    let bank = mel_filterbank(&spec_cfg, cfg.sample_rate)?;
    let digest = spec_cfg.digest(cfg.sample_rate);
    let cache = cfg.feature_cache_dir();
    std::fs::create_dir_all(&cache).map_err(|e| Error::io(&cache, e))?;
    let target = cfg.clip_samples();

    let one = |r: &TrackRecord| -> Result<MelSpectrogram> {
        let cached = cache.join(cache_name(&r.track_id, &digest));
        if let Ok(spec) = load_feature_dump(&cached) {
            if spec.source_id == r.track_id && spec.n_frames == cfg.n_frames {
                return Ok(spec);
            }
        }
        let clip = read_wav(audio_dir.join(&r.audio_path))?.with_source_id(r.track_id.clone());
        let clip = fit_length(&resample(&clip, cfg.sample_rate)?, target)?;
        let spec = mel_spectrogram_with(&clip, &spec_cfg, &bank)?;
        save_feature_dump(&cached, &spec)?;
        // reload so fresh and cached runs see the same f32-rounded cells
        load_feature_dump(&cached)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("key `workers`: {e}")))?;
    pool.install(|| records.par_iter().map(one).collect())
}

pub fn build_samples(records: &[TrackRecord], specs: &[MelSpectrogram], scaler: &FeatureScaler) -> Vec<Sample> {
    records
        .iter()
        .zip(specs)
        .map(|(r, s)| Sample {
            audio: audio_input(s),
            meta: scaler.transform(r),
            target: r.popularity / TARGET_SCALE,
        })
        .collect()
}

/// Train, validation and test records. Validation is the test side unless
/// `validation_fraction` carves a separate artist group out of train.
pub struct Partition {
    pub train: Vec<TrackRecord>,
    pub validation: Vec<TrackRecord>,
    pub test: Vec<TrackRecord>,
}

pub fn partition(cfg: &RunConfig, records: &[TrackRecord]) -> Result<Partition> {
    let split = split_by_artist(records, cfg.train_fraction, cfg.seed)?;
    if cfg.validation_fraction > 0.0 {
        let inner = split_by_artist(&split.train, 1.0 - cfg.validation_fraction, cfg.seed.wrapping_add(1))?;
        Ok(Partition {
            train: inner.train,
            validation: inner.test,
            test: split.test,
        })
    } else {
        Ok(Partition {
            train: split.train,
            validation: split.test.clone(),
            test: split.test,
        })
    }
}

pub fn scaler_blocks(scaler: &FeatureScaler) -> Vec<ParamBlock> {
    let n = scaler.features.len();
    let index = |f: &Feature| Feature::ALL.iter().position(|g| g == f).unwrap_or(0) as f64;
    vec![
        ParamBlock {
            name: "scaler.features".into(),
            shape: vec![n],
            values: scaler.features.iter().map(index).collect(),
        },
        ParamBlock {
            name: "scaler.mean".into(),
            shape: vec![n],
            values: scaler.mean.clone(),
        },
        ParamBlock {
            name: "scaler.std".into(),
            shape: vec![n],
            values: scaler.std.clone(),
        },
    ]
}

pub fn scaler_from_checkpoint(ckpt: &Checkpoint) -> Result<FeatureScaler> {
    let get = |name: &str| {
        ckpt.extra(name)
            .map(|b| b.values.clone())
            .ok_or_else(|| Error::Version(format!("checkpoint lacks block {name}")))
    };
    let features = get("scaler.features")?
        .iter()
        .map(|&i| {
            Feature::ALL
                .get(i as usize)
                .copied()
                .filter(|_| i >= 0.0 && i.fract() == 0.0)
                .ok_or_else(|| Error::Version(format!("bad feature index {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = get("scaler.mean")?;
    let std = get("scaler.std")?;
    if mean.len() != features.len() || std.len() != features.len() {
        return Err(Error::Version("scaler blocks disagree in length".into()));
    }
    Ok(FeatureScaler { features, mean, std })
}

/// Load a checkpoint and check it against the configured network.
pub fn load_checkpoint(cfg: &RunConfig, path: &Path) -> Result<(Checkpoint, FeatureScaler)> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.net.config() != &cfg.net() {
        return Err(Error::Version(format!(
            "checkpoint network {:?} does not match configured network {:?}",
            ckpt.net.config(),
            cfg.net()
        )));
    }
    let scaler = scaler_from_checkpoint(&ckpt)?;
    if scaler.features.len() != cfg.net().meta_dim {
        return Err(Error::Version("checkpoint scaler width does not match meta_dim".into()));
    }
    Ok((ckpt, scaler))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub train_tracks: usize,
    pub validation_tracks: usize,
    pub checkpoint: PathBuf,
    pub epoch_log: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    cfg.write_echo()?;
    let records = load_records(cfg)?;
    let part = partition(cfg, &records)?;
    let scaler = FeatureScaler::fit(&part.train, &cfg.features())?;
    let train_set = build_samples(&part.train, &extract_features(cfg, &part.train)?, &scaler);
    let val_set = build_samples(&part.validation, &extract_features(cfg, &part.validation)?, &scaler);

    let net = PopularityNet::init(cfg.net(), cfg.seed)?;
    let ckpt_path = cfg.out_dir.join(CHECKPOINT_FILE);
    let extras = scaler_blocks(&scaler);
    let outcome = train(net, &train_set, &val_set, &cfg.training(), |best, epoch| {
        let mut ckpt = Checkpoint::new(best.clone(), cfg.seed, epoch as u32);
        ckpt.extras = extras.clone();
        ckpt.save(&ckpt_path)
    })?;
    let log_path = cfg.out_dir.join(EPOCH_LOG_FILE);
    write_file(&log_path, epoch_log_csv(&outcome.logs, cfg.log_wall_time))?;
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        stopped_early: outcome.stopped_early,
        logs: outcome.logs,
        train_tracks: train_set.len(),
        validation_tracks: val_set.len(),
        checkpoint: ckpt_path,
        epoch_log: log_path,
    })
}

#[derive(Debug, Clone, Serialize)]
struct ReportFile<'a> {
    report: &'a EvaluationReport,
    histogram: &'a Histogram,
    checkpoint_epoch: u32,
    config: &'a RunConfig,
}

/// Score the held-out side and write the comparison table, error histogram
/// and JSON summary.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<EvaluationReport> {
    cfg.validate()?;
    cfg.write_echo()?;
    let (ckpt, scaler) = load_checkpoint(cfg, checkpoint)?;
    let records = load_records(cfg)?;
    let test = partition(cfg, &records)?.test;
    let samples = build_samples(&test, &extract_features(cfg, &test)?, &scaler);
    let refs: Vec<&Sample> = samples.iter().collect();
    let preds: Vec<f64> = ckpt
        .net
        .predict_batch(&refs)?
        .into_iter()
        .map(|p| p * TARGET_SCALE)
        .collect();
    let report = evaluate_predictions(&test, &preds, cfg.threshold)?;
    let actual: Vec<f64> = test.iter().map(|r| r.popularity).collect();
    let hist = error_histogram(&preds, &actual, cfg.histogram_bins)?;

    write_file(&cfg.out_dir.join(COMPARISON_FILE), comparison_csv(&report.rows))?;
    write_file(&cfg.out_dir.join(HISTOGRAM_FILE), hist.to_csv())?;
    let summary = ReportFile {
        report: &report,
        histogram: &hist,
        checkpoint_epoch: ckpt.epoch,
        config: cfg,
    };
    write_file(&cfg.out_dir.join(REPORT_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AnalysisSummary {
    pub correlation: CorrelationTable,
    pub heatmap: HeatmapGrid,
}

/// Feature correlations and the month-by-year heatmap over every record.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalysisSummary> {
    cfg.validate()?;
    cfg.write_echo()?;
    let records = load_records(cfg)?;
    let correlation = correlation_report(&records, &Feature::ALL)?;
    let heatmap = monthly_popularity_heatmap(&records)?;
    write_file(&cfg.out_dir.join(CORRELATION_FILE), correlation.to_csv())?;
    write_file(&cfg.out_dir.join(HEATMAP_FILE), heatmap.to_csv())?;
    Ok(AnalysisSummary { correlation, heatmap })
}

/// Parse `name=value` pairs separated by commas into `features` order.
pub fn parse_meta_row(row: &str, features: &[Feature]) -> Result<Vec<f64>> {
    let mut values: Vec<Option<f64>> = vec![None; features.len()];
    for pair in row.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("expected name=value, got {pair:?}")))?;
        let (name, value) = (name.trim(), value.trim());
        let feature =
            Feature::from_name(name).ok_or_else(|| Error::InvalidInput(format!("unknown feature {name:?}")))?;
        let v: f64 = value.parse().map_err(|_| Error::Parse {
            row: 1,
            column: name.to_string(),
            value: value.to_string(),
        })?;
        if let Some(slot) = features.iter().position(|&f| f == feature) {
            values[slot] = Some(v);
        }
    }
    values
        .iter()
        .zip(features)
        .map(|(v, f)| v.ok_or_else(|| Error::InvalidInput(format!("missing feature {}", f.name()))))
        .collect()
}

/// Predicted popularity for one audio file, clamped to `[0, 100]`.
pub fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, audio: &Path, meta_row: &str) -> Result<f64> {
    cfg.validate()?;
    let (ckpt, scaler) = load_checkpoint(cfg, checkpoint)?;
    let spec = spectrogram_for_file(cfg, audio)?;
    let meta = scaler.transform_values(&parse_meta_row(meta_row, &scaler.features)?)?;
    let raw = ckpt.net.predict(&audio_input(&spec), &meta)? * TARGET_SCALE;
    Ok(raw.clamp(0.0, 100.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::model_features;

    #[test]
    fn meta_row_parsing() {
        let feats = [Feature::Danceability, Feature::Tempo];
        assert_eq!(parse_meta_row("tempo=120, danceability=0.5", &feats).unwrap(), vec![0.5, 120.0]);
        assert!(parse_meta_row("tempo=120", &feats).is_err());
        assert!(parse_meta_row("tempo=fast,danceability=1", &feats).is_err());
        assert!(parse_meta_row("bogus=1", &feats).is_err());
    }

    #[test]
    fn scaler_blocks_round_trip() {
        let scaler = FeatureScaler {
            features: model_features(false),
            mean: (0..12).map(f64::from).collect(),
            std: vec![2.0; 12],
        };
        let cfg = RunConfig {
            n_mels: 16,
            n_frames: 16,
            conv_filters: vec![2, 2, 2, 2],
            include_artist_features: false,
            ..Default::default()
        };
        let mut ckpt = Checkpoint::new(PopularityNet::zeros(cfg.net()).unwrap(), 0, 0);
        ckpt.extras = scaler_blocks(&scaler);
        assert_eq!(scaler_from_checkpoint(&ckpt).unwrap(), scaler);
        ckpt.extras.pop();
        assert!(matches!(scaler_from_checkpoint(&ckpt), Err(Error::Version(_))));
    }

    #[test]
    fn cache_names_are_path_safe() {
        assert_eq!(cache_name("a/b c", "ff"), "a_b_c-ff.spmel");
    }
}
