//! Seeded synthetic corpora: sine-mixture WAVs whose pitch tracks
//! danceability, plus a catalog fixture whose popularity is an affine
//! function of danceability and artist popularity.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::audio::{write_wav, AudioClip, BitDepth};
use crate::dataset::TrackRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_artists: usize,
    pub tracks_per_artist: usize,
    pub sample_rate: u32,
    pub clip_samples: usize,
    /// Half-width of the uniform popularity noise, in popularity points.
    pub noise: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    /// 64 tracks over 16 artists.
    fn default() -> Self {
        Self {
            n_artists: 16,
            tracks_per_artist: 4,
            sample_rate: 22_050,
            clip_samples: 8448,
            noise: 2.0,
            seed: 0,
        }
    }
}

/// Noise-free popularity.
pub fn popularity_target(danceability: f64, artist_popularity: f64) -> f64 {
    10.0 + 50.0 * danceability + 0.4 * artist_popularity
}

/// Fundamental frequency of a track's tone, rising with danceability.
pub fn fundamental_hz(danceability: f64) -> f64 {
    110.0 * 2f64.powf(4.0 * danceability)
}

/// Records only; no files are touched.
pub fn synthetic_records(spec: &CorpusSpec) -> Vec<TrackRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n_artists * spec.tracks_per_artist);
    for a in 0..spec.n_artists {
        let artist_id = format!("artist{a:03}");
        let artist_pop = rng.gen_range(20.0..90.0_f64).round();
        let followers = (10f64.powf(3.0 + artist_pop / 20.0) * rng.gen_range(0.5..1.5)).round();
        for t in 0..spec.tracks_per_artist {
            let track_id = format!("{artist_id}_t{t:02}");
            let mut r = TrackRecord::new(track_id.clone(), artist_id.clone());
            r.danceability = rng.gen_range(0.0..1.0);
            r.artist_popularity = artist_pop;
            r.artist_followers = followers;
            let noise = rng.gen_range(-spec.noise..=spec.noise);
            r.popularity = (popularity_target(r.danceability, artist_pop) + noise).clamp(0.0, 100.0);
            r.duration_ms = rng.gen_range(120_000.0..320_000.0_f64).round();
            r.acousticness = rng.gen_range(0.0..1.0);
            r.energy = rng.gen_range(0.0..1.0);
            r.instrumentalness = rng.gen_range(0.0..0.5);
            r.liveness = rng.gen_range(0.0..0.6);
            r.loudness = rng.gen_range(-20.0..-2.0);
            r.speechiness = rng.gen_range(0.02..0.4);
            r.tempo = rng.gen_range(70.0..180.0);
            r.time_signature = [3.0, 4.0, 4.0, 4.0, 5.0][rng.gen_range(0..5)];
            r.valence = rng.gen_range(0.0..1.0);
            r.release_year = rng.gen_range(2015..=2020);
            r.release_month = rng.gen_range(1..=12);
            r.audio_path = format!("{track_id}.wav");
            out.push(r);
        }
    }
    out
}

/// Three-harmonic tone at [`fundamental_hz`] with per-track phases.
pub fn synthesize_clip(record: &TrackRecord, sample_rate: u32, len: usize, seed: u64) -> Result<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = fundamental_hz(record.danceability);
    let partials: Vec<(f64, f64, f64)> = [(1.0, 0.4), (2.0, 0.25), (3.0, 0.15)]
        .iter()
        .map(|&(k, amp)| (k * f0, amp, rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let sr = f64::from(sample_rate);
    let samples = (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            partials
                .iter()
                .map(|&(f, a, phi)| a * (2.0 * PI * f * t + phi).sin())
                .sum()
        })
        .collect();
    AudioClip::new(samples, sample_rate, record.track_id.clone())
}

/// Catalog fixture document grouping `records` by artist in first-seen order.
pub fn catalog_value(records: &[TrackRecord]) -> Value {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.artist_id.as_str()) {
            order.push(&r.artist_id);
        }
    }
    let artists: Vec<Value> = order
        .iter()
        .map(|&aid| {
            let mine: Vec<&TrackRecord> = records.iter().filter(|r| r.artist_id == aid).collect();
            let tracks: Vec<Value> = mine
                .iter()
                .map(|r| {
                    json!({
                        "track_id": r.track_id,
                        "popularity": r.popularity,
                        "duration_ms": r.duration_ms,
                        "acousticness": r.acousticness,
                        "danceability": r.danceability,
                        "energy": r.energy,
                        "instrumentalness": r.instrumentalness,
                        "liveness": r.liveness,
                        "loudness": r.loudness,
                        "speechiness": r.speechiness,
                        "tempo": r.tempo,
                        "time_signature": r.time_signature,
                        "valence": r.valence,
                        "key": 0,
                        "mode": 1,
                        "uri": format!("spotify:track:{}", r.track_id),
                        "release_date": format!("{:04}-{:02}-01", r.release_year, r.release_month),
                        "audio_path": r.audio_path,
                    })
                })
                .collect();
            json!({
                "artist_id": aid,
                "name": format!("Artist {aid}"),
                "artist_popularity": mine[0].artist_popularity,
                "artist_followers": mine[0].artist_followers,
                "tracks": tracks,
            })
        })
        .collect();
    json!({ "artists": artists })
}

/// Paths of a corpus written to disk.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<TrackRecord>,
    pub catalog: PathBuf,
    pub audio_dir: PathBuf,
}

/// Write `catalog.json` and `audio/<track>.wav` under `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, spec: &CorpusSpec) -> Result<Corpus> {
    if spec.n_artists == 0 || spec.tracks_per_artist == 0 || spec.clip_samples == 0 {
        return Err(Error::InvalidInput("corpus needs artists, tracks and samples".into()));
    }
    let dir = dir.as_ref();
    let audio_dir = dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let records = synthetic_records(spec);
    for (i, r) in records.iter().enumerate() {
        let clip = synthesize_clip(r, spec.sample_rate, spec.clip_samples, spec.seed ^ (i as u64 + 1))?;
        write_wav(audio_dir.join(&r.audio_path), &clip, BitDepth::Sixteen)?;
    }
    let catalog = dir.join("catalog.json");
    let text = serde_json::to_string_pretty(&catalog_value(&records))?;
    std::fs::write(&catalog, text).map_err(|e| Error::io(&catalog, e))?;
    Ok(Corpus {
        records,
        catalog,
        audio_dir,
    })
}

/// A catalog at the scale of the curated study: `n_artists` artists with
/// `tracks_per_artist` complete tracks each, plus one incomplete track
/// (null valence) for every tenth artist.
pub fn curated_catalog(n_artists: usize, tracks_per_artist: usize, seed: u64) -> Value {
    let spec = CorpusSpec {
        n_artists,
        tracks_per_artist,
        seed,
        ..CorpusSpec::default()
    };
    let mut doc = catalog_value(&synthetic_records(&spec));
    if let Some(artists) = doc["artists"].as_array_mut() {
        for (i, a) in artists.iter_mut().enumerate().filter(|(i, _)| i % 10 == 0) {
            let mut extra = a["tracks"][0].clone();
            extra["track_id"] = json!(format!("incomplete{i:03}"));
            extra["valence"] = Value::Null;
            if let Some(ts) = a["tracks"].as_array_mut() {
                ts.push(extra);
            }
        }
    }
    doc
}
