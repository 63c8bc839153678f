//! Track metadata ingestion, cleaning, scaling and artist-disjoint splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, Result};

/// The fourteen model input features, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    DurationMs,
    Acousticness,
    Danceability,
    Energy,
    Instrumentalness,
    Liveness,
    Loudness,
    Speechiness,
    Tempo,
    TimeSignature,
    Valence,
    ArtistPopularity,
    ArtistFollowers,
    ReleaseYear,
}

impl Feature {
    pub const ALL: [Feature; 14] = [
        Feature::DurationMs,
        Feature::Acousticness,
        Feature::Danceability,
        Feature::Energy,
        Feature::Instrumentalness,
        Feature::Liveness,
        Feature::Loudness,
        Feature::Speechiness,
        Feature::Tempo,
        Feature::TimeSignature,
        Feature::Valence,
        Feature::ArtistPopularity,
        Feature::ArtistFollowers,
        Feature::ReleaseYear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::DurationMs => "duration_ms",
            Feature::Acousticness => "acousticness",
            Feature::Danceability => "danceability",
            Feature::Energy => "energy",
            Feature::Instrumentalness => "instrumentalness",
            Feature::Liveness => "liveness",
            Feature::Loudness => "loudness",
            Feature::Speechiness => "speechiness",
            Feature::Tempo => "tempo",
            Feature::TimeSignature => "time_signature",
            Feature::Valence => "valence",
            Feature::ArtistPopularity => "artist_popularity",
            Feature::ArtistFollowers => "artist_followers",
            Feature::ReleaseYear => "release_year",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    fn is_artist_level(self) -> bool {
        matches!(self, Feature::ArtistPopularity | Feature::ArtistFollowers)
    }

    /// Inclusive bounds for features that have documented ranges.
    fn bounds(self) -> Option<(f64, f64)> {
        match self {
            Feature::Acousticness
            | Feature::Danceability
            | Feature::Energy
            | Feature::Instrumentalness
            | Feature::Liveness
            | Feature::Speechiness
            | Feature::Valence => Some((0.0, 1.0)),
            Feature::ArtistPopularity => Some((0.0, 100.0)),
            Feature::DurationMs | Feature::Tempo | Feature::ArtistFollowers => {
                Some((0.0, f64::INFINITY))
            }
            _ => None,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Model features, optionally without the two artist-level columns.
pub fn model_features(include_artist: bool) -> Vec<Feature> {
    Feature::ALL
        .into_iter()
        .filter(|f| include_artist || !f.is_artist_level())
        .collect()
}

/// Tracks CSV columns, in file order.
pub const CSV_COLUMNS: [&str; 19] = [
    "track_id",
    "artist_id",
    "popularity",
    "duration_ms",
    "acousticness",
    "danceability",
    "energy",
    "instrumentalness",
    "liveness",
    "loudness",
    "speechiness",
    "tempo",
    "time_signature",
    "valence",
    "artist_popularity",
    "artist_followers",
    "release_year",
    "release_month",
    "audio_path",
];

/// Catalog attributes that carry no modelling signal; accepted on input
/// and removed by [`clean_records`].
fn is_droppable_attribute(name: &str) -> bool {
    let n = name.to_ascii_lowercase();
    n == "key"
        || n == "mode"
        || n == "id"
        || n == "type"
        || n.contains("uri")
        || n.contains("url")
        || n.contains("href")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub track_id: String,
    pub artist_id: String,
    pub popularity: f64,
    pub duration_ms: f64,
    pub acousticness: f64,
    pub danceability: f64,
    pub energy: f64,
    pub instrumentalness: f64,
    pub liveness: f64,
    pub loudness: f64,
    pub speechiness: f64,
    pub tempo: f64,
    pub time_signature: f64,
    pub valence: f64,
    pub artist_popularity: f64,
    pub artist_followers: f64,
    pub release_year: i32,
    pub release_month: u32,
    pub audio_path: String,
    /// Non-model attributes carried through from the source.
    pub extras: BTreeMap<String, String>,
}

impl TrackRecord {
    pub fn feature(&self, f: Feature) -> f64 {
        match f {
            Feature::DurationMs => self.duration_ms,
            Feature::Acousticness => self.acousticness,
            Feature::Danceability => self.danceability,
            Feature::Energy => self.energy,
            Feature::Instrumentalness => self.instrumentalness,
            Feature::Liveness => self.liveness,
            Feature::Loudness => self.loudness,
            Feature::Speechiness => self.speechiness,
            Feature::Tempo => self.tempo,
            Feature::TimeSignature => self.time_signature,
            Feature::Valence => self.valence,
            Feature::ArtistPopularity => self.artist_popularity,
            Feature::ArtistFollowers => self.artist_followers,
            Feature::ReleaseYear => f64::from(self.release_year),
        }
    }

    pub fn set_feature(&mut self, f: Feature, v: f64) {
        match f {
            Feature::DurationMs => self.duration_ms = v,
            Feature::Acousticness => self.acousticness = v,
            Feature::Danceability => self.danceability = v,
            Feature::Energy => self.energy = v,
            Feature::Instrumentalness => self.instrumentalness = v,
            Feature::Liveness => self.liveness = v,
            Feature::Loudness => self.loudness = v,
            Feature::Speechiness => self.speechiness = v,
            Feature::Tempo => self.tempo = v,
            Feature::TimeSignature => self.time_signature = v,
            Feature::Valence => self.valence = v,
            Feature::ArtistPopularity => self.artist_popularity = v,
            Feature::ArtistFollowers => self.artist_followers = v,
            Feature::ReleaseYear => self.release_year = v as i32,
        }
    }

    /// All fourteen model features in canonical order.
    pub fn model_features(&self) -> Vec<f64> {
        Feature::ALL.iter().map(|&f| self.feature(f)).collect()
    }

    /// Record with every numeric field zeroed.
    pub fn new(track_id: String, artist_id: String) -> Self {
        Self {
            track_id,
            artist_id,
            popularity: 0.0,
            duration_ms: 0.0,
            acousticness: 0.0,
            danceability: 0.0,
            energy: 0.0,
            instrumentalness: 0.0,
            liveness: 0.0,
            loudness: 0.0,
            speechiness: 0.0,
            tempo: 0.0,
            time_signature: 0.0,
            valence: 0.0,
            artist_popularity: 0.0,
            artist_followers: 0.0,
            release_year: 0,
            release_month: 0,
            audio_path: String::new(),
            extras: BTreeMap::new(),
        }
    }

    /// Range checks for bounded fields; `at` prefixes the error path.
    pub fn validate(&self, at: &str) -> Result<()> {
        let err = |field: &str, message: String| Error::Schema {
            path: format!("{at}.{field}"),
            message,
        };
        if self.artist_id.is_empty() {
            return Err(err("artist_id", "must be non-empty".into()));
        }
        if self.track_id.is_empty() {
            return Err(err("track_id", "must be non-empty".into()));
        }
        if !(0.0..=100.0).contains(&self.popularity) {
            return Err(err("popularity", format!("{} outside 0-100", self.popularity)));
        }
        for f in Feature::ALL {
            let v = self.feature(f);
            if !v.is_finite() {
                return Err(err(f.name(), "not finite".into()));
            }
            if let Some((lo, hi)) = f.bounds() {
                if v < lo || v > hi {
                    return Err(err(f.name(), format!("{v} outside [{lo}, {hi}]")));
                }
            }
        }
        if !(1..=12).contains(&self.release_month) {
            return Err(err("release_month", format!("{} outside 1-12", self.release_month)));
        }
        Ok(())
    }
}

/// Records plus the number of tracks skipped for missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTracks {
    pub records: Vec<TrackRecord>,
    pub dropped_incomplete: usize,
    pub artists: usize,
}

fn count_artists(records: &[TrackRecord]) -> usize {
    records.iter().map(|r| &r.artist_id).collect::<HashSet<_>>().len()
}

fn reject_duplicates(records: &[TrackRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.track_id.as_str()) {
            return Err(Error::DuplicateTrack(r.track_id.clone()));
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Field<T> {
    Present(T),
    Null,
}

/// Unwrap a numeric field, recording a null as an incomplete record.
fn value_or_missing(field: Field<f64>, complete: &mut bool) -> f64 {
    match field {
        Field::Present(v) => v,
        Field::Null => {
            *complete = false;
            0.0
        }
    }
}

struct JsonCursor<'a> {
    obj: &'a serde_json::Map<String, Value>,
    path: String,
}

impl<'a> JsonCursor<'a> {
    fn new(v: &'a Value, path: String) -> Result<Self> {
        match v.as_object() {
            Some(obj) => Ok(Self { obj, path }),
            None => Err(Error::Schema {
                path,
                message: "expected an object".into(),
            }),
        }
    }

    fn raw(&self, key: &str) -> Result<&'a Value> {
        self.obj.get(key).ok_or_else(|| Error::Schema {
            path: format!("{}.{key}", self.path),
            message: "missing field".into(),
        })
    }

    fn type_err(&self, key: &str, expected: &str) -> Error {
        Error::Schema {
            path: format!("{}.{key}", self.path),
            message: format!("expected {expected}"),
        }
    }

    fn string(&self, key: &str) -> Result<Field<String>> {
        match self.raw(key)? {
            Value::Null => Ok(Field::Null),
            Value::String(s) => Ok(Field::Present(s.clone())),
            Value::Number(n) => Ok(Field::Present(n.to_string())),
            _ => Err(self.type_err(key, "a string")),
        }
    }

    fn number(&self, key: &str) -> Result<Field<f64>> {
        match self.raw(key)? {
            Value::Null => Ok(Field::Null),
            Value::Number(n) => Ok(Field::Present(n.as_f64().unwrap_or(f64::NAN))),
            _ => Err(self.type_err(key, "a number")),
        }
    }
}

/// Parse `YYYY-MM[-DD]`; a year-only date has no month.
fn parse_release_date(s: &str) -> Option<(i32, Option<u32>)> {
    let mut parts = s.split('-');
    let year = parts.next()?.parse().ok()?;
    let month = match parts.next() {
        Some(m) => Some(m.parse().ok()?),
        None => None,
    };
    Some((year, month))
}

/// Parse a catalog fixture document.
pub fn parse_catalog_json(text: &str) -> Result<LoadedTracks> {
    let doc: Value = serde_json::from_str(text)?;
    let root = JsonCursor::new(&doc, "$".into())?;
    let artists = root
        .raw("artists")?
        .as_array()
        .ok_or_else(|| root.type_err("artists", "an array"))?;
    let mut records = Vec::new();
    let mut dropped = 0;
    for (ai, a) in artists.iter().enumerate() {
        let artist = JsonCursor::new(a, format!("artists[{ai}]"))?;
        let artist_id = match artist.string("artist_id")? {
            Field::Present(s) => s,
            Field::Null => return Err(artist.type_err("artist_id", "a string")),
        };
        artist.string("name")?;
        let a_pop = artist.number("artist_popularity")?;
        let a_fol = artist.number("artist_followers")?;
        let tracks = artist
            .raw("tracks")?
            .as_array()
            .ok_or_else(|| artist.type_err("tracks", "an array"))?;
        for (ti, t) in tracks.iter().enumerate() {
            let track = JsonCursor::new(t, format!("artists[{ai}].tracks[{ti}]"))?;
            let track_id = match track.string("track_id")? {
                Field::Present(s) => s,
                Field::Null => return Err(track.type_err("track_id", "a string")),
            };
            let mut rec = TrackRecord::new(track_id, artist_id.clone());
            let mut complete = true;
            rec.popularity = value_or_missing(track.number("popularity")?, &mut complete);
            for f in Feature::ALL {
                let field = match f {
                    Feature::ArtistPopularity => a_pop,
                    Feature::ArtistFollowers => a_fol,
                    Feature::ReleaseYear => continue,
                    _ => track.number(f.name())?,
                };
                rec.set_feature(f, value_or_missing(field, &mut complete));
            }
            if track.obj.contains_key("release_date") {
                match track.string("release_date")? {
                    Field::Present(s) => match parse_release_date(&s) {
                        Some((y, Some(m))) => {
                            rec.release_year = y;
                            rec.release_month = m;
                        }
                        Some((_, None)) => complete = false,
                        None => {
                            return Err(Error::Schema {
                                path: format!("{}.release_date", track.path),
                                message: format!("unparseable date {s:?}"),
                            })
                        }
                    },
                    Field::Null => complete = false,
                }
            } else {
                rec.release_year =
                    value_or_missing(track.number("release_year")?, &mut complete) as i32;
                rec.release_month =
                    value_or_missing(track.number("release_month")?, &mut complete) as u32;
            }
            match track.string("audio_path")? {
                Field::Present(p) if !p.is_empty() => rec.audio_path = p,
                _ => complete = false,
            }
            for (k, v) in track.obj {
                let known = k == "track_id"
                    || k == "popularity"
                    || k == "audio_path"
                    || k == "release_date"
                    || k == "release_year"
                    || k == "release_month"
                    || Feature::from_name(k).is_some();
                if !known {
                    let text = match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    rec.extras.insert(k.clone(), text);
                }
            }
            if complete {
                rec.validate(&track.path)?;
                records.push(rec);
            } else {
                dropped += 1;
            }
        }
    }
    reject_duplicates(&records)?;
    Ok(LoadedTracks {
        artists: count_artists(&records),
        records,
        dropped_incomplete: dropped,
    })
}

pub fn load_catalog_json(path: impl AsRef<Path>) -> Result<LoadedTracks> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_catalog_json(&text)
}

/// Parse a tracks CSV. Rows with any empty cell are dropped and counted.
pub fn read_tracks_csv(reader: impl std::io::Read) -> Result<LoadedTracks> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if !CSV_COLUMNS.contains(&h) && !is_droppable_attribute(h) {
            return Err(Error::Schema {
                path: format!("header.{h}"),
                message: "unknown column".into(),
            });
        }
        index.insert(h.to_string(), i);
    }
    for col in CSV_COLUMNS {
        if !index.contains_key(col) {
            return Err(Error::Schema {
                path: format!("header.{col}"),
                message: "missing column".into(),
            });
        }
    }

    let mut records = Vec::new();
    let mut dropped = 0;
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        // data rows are numbered from 1, the header is row 0
        let row_no = i + 1;
        let cell = |col: &str| row.get(index[col]).unwrap_or("").trim();
        if CSV_COLUMNS.iter().any(|c| cell(c).is_empty()) {
            dropped += 1;
            continue;
        }
        let num = |col: &str| -> Result<f64> {
            cell(col).parse::<f64>().map_err(|_| Error::Parse {
                row: row_no,
                column: col.to_string(),
                value: cell(col).to_string(),
            })
        };
        let mut rec = TrackRecord::new(cell("track_id").into(), cell("artist_id").into());
        rec.popularity = num("popularity")?;
        for f in Feature::ALL {
            rec.set_feature(f, num(f.name())?);
        }
        let year = num("release_year")?;
        let month = num("release_month")?;
        rec.release_year = year as i32;
        rec.release_month = month as u32;
        if year.fract() != 0.0 || month.fract() != 0.0 {
            return Err(Error::Schema {
                path: format!("row {row_no}.release_year/release_month"),
                message: "must be whole numbers".into(),
            });
        }
        rec.audio_path = cell("audio_path").into();
        for (name, &col) in &index {
            if is_droppable_attribute(name) && !CSV_COLUMNS.contains(&name.as_str()) {
                rec.extras.insert(name.clone(), row.get(col).unwrap_or("").to_string());
            }
        }
        rec.validate(&format!("row {row_no}"))?;
        records.push(rec);
    }
    reject_duplicates(&records)?;
    Ok(LoadedTracks {
        artists: count_artists(&records),
        records,
        dropped_incomplete: dropped,
    })
}

pub fn load_tracks_csv(path: impl AsRef<Path>) -> Result<LoadedTracks> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tracks_csv(f)
}

/// Write records in the canonical column order.
pub fn write_tracks_csv(writer: impl std::io::Write, records: &[TrackRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        let mut row: Vec<String> = vec![
            r.track_id.clone(),
            r.artist_id.clone(),
            r.popularity.to_string(),
        ];
        row.extend(Feature::ALL[..13].iter().map(|&f| r.feature(f).to_string()));
        row.push(r.release_year.to_string());
        row.push(r.release_month.to_string());
        row.push(r.audio_path.clone());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_tracks_csv(path: impl AsRef<Path>, records: &[TrackRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_tracks_csv(std::io::BufWriter::new(f), records)
}

/// Remove key, mode and platform identifier/link attributes.
pub fn clean_records(records: Vec<TrackRecord>) -> Vec<TrackRecord> {
    records
        .into_iter()
        .map(|mut r| {
            r.extras.retain(|k, _| !is_droppable_attribute(k));
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TrackRecord>,
    pub test: Vec<TrackRecord>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn train_fraction(&self) -> f64 {
        self.train.len() as f64 / (self.train.len() + self.test.len()) as f64
    }
}

/// Artist-disjoint split.
///
/// Artists (in first-appearance order) are shuffled by `seed`, then each is
/// assigned to train if that moves the train track count closer to
/// `train_fraction * total`, otherwise to test. Both sides are guaranteed
/// at least one artist. Record order within each side follows the input.
pub fn split_by_artist(records: &[TrackRecord], train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for r in records {
        let e = sizes.entry(r.artist_id.as_str()).or_insert(0);
        if *e == 0 {
            order.push(r.artist_id.as_str());
        }
        *e += 1;
    }
    if order.len() < 2 {
        return Err(Error::UnsatisfiableSplit(format!(
            "{} distinct artist(s); an artist-disjoint split needs at least 2",
            order.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let target = train_fraction * records.len() as f64;
    let mut in_train: HashSet<&str> = HashSet::new();
    let mut count = 0usize;
    for &artist in &order {
        let s = sizes[artist];
        let before = (count as f64 - target).abs();
        let after = ((count + s) as f64 - target).abs();
        if after < before {
            in_train.insert(artist);
            count += s;
        }
    }
    if in_train.is_empty() {
        in_train.insert(order[0]);
    } else if in_train.len() == order.len() {
        let last = *order.last().unwrap();
        in_train.remove(last);
    }
    let (train, test) = records
        .iter()
        .cloned()
        .partition(|r| in_train.contains(r.artist_id.as_str()));
    Ok(DatasetSplit { train, test, seed })
}

/// Per-feature z-score using population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub features: Vec<Feature>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(train: &[TrackRecord], features: &[Feature]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("cannot fit a scaler on zero rows".into()));
        }
        let n = train.len() as f64;
        let mut mean = Vec::with_capacity(features.len());
        let mut std = Vec::with_capacity(features.len());
        for &f in features {
            let m = train.iter().map(|r| r.feature(f)).sum::<f64>() / n;
            let var = train.iter().map(|r| (r.feature(f) - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s.is_nan() || s <= 0.0 || s <= 1e-12 * m.abs() {
                return Err(Error::DegenerateFeature(f.name().into()));
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self {
            features: features.to_vec(),
            mean,
            std,
        })
    }

    pub fn transform(&self, record: &TrackRecord) -> Vec<f64> {
        self.features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&f, (m, s))| (record.feature(f) - m) / s)
            .collect()
    }

    /// Scale raw values given in this scaler's feature order.
    pub fn transform_values(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.features.len() {
            return Err(Error::Shape(format!(
                "{} values for {} scaled features",
                raw.len(),
                self.features.len()
            )));
        }
        Ok(raw
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn inverse(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }
}

/// Indices of one epoch's batches. With `shuffle`, the order is a
/// permutation drawn from `(seed, epoch)`; the final batch may be short.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        idx.shuffle(&mut rng);
    }
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Borrowing form of [`epoch_batches`].
pub fn batch_iter<T>(
    items: &[T],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    shuffle: bool,
) -> Result<Vec<Vec<&T>>> {
    Ok(epoch_batches(items.len(), batch_size, seed, epoch, shuffle)?
        .into_iter()
        .map(|b| b.into_iter().map(|i| &items[i]).collect())
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn record(track: &str, artist: &str, popularity: f64) -> TrackRecord {
        let mut r = TrackRecord::new(track.into(), artist.into());
        r.popularity = popularity;
        r.duration_ms = 200_000.0;
        r.danceability = 0.5;
        r.tempo = 120.0;
        r.time_signature = 4.0;
        r.loudness = -6.0;
        r.artist_popularity = 80.0;
        r.artist_followers = 1e6;
        r.release_year = 2019;
        r.release_month = 5;
        r.audio_path = format!("{track}.wav");
        r
    }

    fn catalog(artists: usize, tracks: usize) -> String {
        let arts: Vec<Value> = (0..artists)
            .map(|a| {
                let ts: Vec<Value> = (0..tracks)
                    .map(|t| {
                        serde_json::json!({
                            "track_id": format!("a{a}t{t}"), "popularity": 50 + t,
                            "duration_ms": 200000, "acousticness": 0.2, "danceability": 0.6,
                            "energy": 0.7, "instrumentalness": 0.0, "liveness": 0.1,
                            "loudness": -5.0, "speechiness": 0.05, "tempo": 120.0,
                            "time_signature": 4, "valence": 0.4, "key": 7, "mode": 0,
                            "uri": "spotify:track:x", "release_date": "2019-05-17",
                            "audio_path": format!("a{a}t{t}.wav")
                        })
                    })
                    .collect();
                serde_json::json!({"artist_id": format!("a{a}"), "name": "n",
                    "artist_popularity": 80, "artist_followers": 1000, "tracks": ts})
            })
            .collect();
        serde_json::json!({ "artists": arts }).to_string()
    }

    #[test]
    fn catalog_counts_and_cleaning() {
        let loaded = parse_catalog_json(&catalog(2, 20)).unwrap();
        assert_eq!(loaded.records.len(), 40);
        assert_eq!(loaded.artists, 2);
        assert_eq!(loaded.records[0].extras.get("key").map(String::as_str), Some("7"));
        let cleaned = clean_records(loaded.records);
        assert!(cleaned.iter().all(|r| r.extras.is_empty()));
        assert!(cleaned.iter().all(|r| r.model_features().len() == 14));
        assert_eq!(clean_records(cleaned.clone()), cleaned);
        assert_eq!(cleaned[3].release_month, 5);

        let empty = parse_catalog_json(r#"{"artists": []}"#).unwrap();
        assert!(empty.records.is_empty());
    }

    #[test]
    fn catalog_schema_errors_name_the_field() {
        let text = catalog(1, 2).replace("\"danceability\":0.6,", "");
        match parse_catalog_json(&text) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "artists[0].tracks[0].danceability"),
            other => panic!("{other:?}"),
        }
        let dup = catalog(1, 1).replace("a0t0", "same");
        let mut v: Value = serde_json::from_str(&dup).unwrap();
        let t = v["artists"][0]["tracks"][0].clone();
        v["artists"][0]["tracks"].as_array_mut().unwrap().push(t);
        assert!(matches!(parse_catalog_json(&v.to_string()), Err(Error::DuplicateTrack(_))));
    }

    #[test]
    fn catalog_nulls_are_dropped_not_errors() {
        let text = catalog(1, 3);
        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["artists"][0]["tracks"][1]["energy"] = Value::Null;
        v["artists"][0]["tracks"][2]["release_date"] = Value::String("2019".into());
        let loaded = parse_catalog_json(&v.to_string()).unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert_eq!(loaded.dropped_incomplete, 2);
    }

    const HEADER: &str = "track_id,artist_id,popularity,duration_ms,acousticness,danceability,energy,instrumentalness,liveness,loudness,speechiness,tempo,time_signature,valence,artist_popularity,artist_followers,release_year,release_month,audio_path";

    #[test]
    fn castle_row_parses_exactly() {
        let csv = format!(
            "{HEADER}\ncastle,halsey,71,277623,0.25,0.626,0.571,0.0,0.0946,-7.461,0.0327,129.959,4,0.164,82,1000000,2015,8,castle.wav\n"
        );
        let loaded = read_tracks_csv(csv.as_bytes()).unwrap();
        let r = &loaded.records[0];
        assert_eq!(r.acousticness, 0.25);
        assert_eq!(r.danceability, 0.626);
        assert_eq!(r.duration_ms, 277_623.0);
        assert_eq!(r.energy, 0.571);
        assert_eq!(r.liveness, 0.0946);
        assert_eq!(r.loudness, -7.461);
        assert_eq!(r.speechiness, 0.0327);
        assert_eq!(r.tempo, 129.959);
        assert_eq!(r.time_signature, 4.0);
        assert_eq!(r.valence, 0.164);
    }

    #[test]
    fn csv_edge_cases() {
        assert!(read_tracks_csv(format!("{HEADER}\n").as_bytes()).unwrap().records.is_empty());

        let row = |id: &str, energy: &str| {
            format!("{id},a,50,200000,0.1,0.5,{energy},0,0.1,-5,0.05,120,4,0.5,80,1000,2020,1,{id}.wav")
        };
        let csv = format!("{HEADER}\n{}\n{}\n{}\n", row("x", "0.5"), row("y", ""), row("z", "0.7"));
        let loaded = read_tracks_csv(csv.as_bytes()).unwrap();
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.dropped_incomplete, 1);

        let bad = format!("{HEADER}\n{}\n{}\n", row("x", "0.5"), row("y", "loud"));
        match read_tracks_csv(bad.as_bytes()) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "energy")),
            other => panic!("{other:?}"),
        }

        let unknown = format!("{HEADER},lyrics\n");
        assert!(matches!(read_tracks_csv(unknown.as_bytes()), Err(Error::Schema { .. })));

        let with_key = format!("{HEADER},key\n{},7\n", row("k", "0.5"));
        let loaded = read_tracks_csv(with_key.as_bytes()).unwrap();
        assert_eq!(loaded.records[0].extras["key"], "7");
        assert!(!clean_records(loaded.records)[0].extras.contains_key("key"));
    }

    #[test]
    fn csv_round_trip_is_stable() {
        let recs: Vec<TrackRecord> = (0..5).map(|i| record(&format!("t{i}"), "a", 10.0 * i as f64)).collect();
        let mut buf = Vec::new();
        write_tracks_csv(&mut buf, &recs).unwrap();
        let back = read_tracks_csv(buf.as_slice()).unwrap();
        assert_eq!(back.records, recs);
        let mut again = Vec::new();
        write_tracks_csv(&mut again, &back.records).unwrap();
        assert_eq!(buf, again);
    }

    fn uniform_catalog(artists: usize, per: usize) -> Vec<TrackRecord> {
        (0..artists)
            .flat_map(|a| (0..per).map(move |t| record(&format!("a{a}t{t}"), &format!("a{a}"), 50.0)))
            .collect()
    }

    #[test]
    fn split_ten_by_ten() {
        let recs = uniform_catalog(10, 10);
        let s = split_by_artist(&recs, 0.8, 42).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        assert_eq!(s, split_by_artist(&recs, 0.8, 42).unwrap());
        assert!(matches!(
            split_by_artist(&uniform_catalog(1, 10), 0.8, 0),
            Err(Error::UnsatisfiableSplit(_))
        ));
        let two = split_by_artist(&uniform_catalog(2, 5), 0.8, 0).unwrap();
        assert_eq!((two.train.len(), two.test.len()), (5, 5));
    }

    #[test]
    fn scaler_two_point() {
        let mut a = record("a", "x", 1.0);
        let mut b = record("b", "y", 2.0);
        a.energy = 0.0;
        b.energy = 10.0;
        let s = FeatureScaler::fit(&[a.clone(), b.clone()], &[Feature::Energy]).unwrap();
        assert_eq!((s.mean[0], s.std[0]), (5.0, 5.0));
        assert_eq!(s.transform(&a), vec![-1.0]);
        assert_eq!(s.transform(&b), vec![1.0]);
        match FeatureScaler::fit(&[a, b], &[Feature::Tempo]) {
            Err(Error::DegenerateFeature(name)) => assert_eq!(name, "tempo"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn batches() {
        let b = epoch_batches(70, 32, 1, 0, true).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![32, 32, 6]);
        let plain = epoch_batches(5, 2, 1, 0, false).unwrap();
        assert_eq!(plain, vec![vec![0, 1], vec![2, 3], vec![4]]);
        assert_ne!(epoch_batches(50, 50, 1, 0, true).unwrap(), epoch_batches(50, 50, 1, 1, true).unwrap());
        assert!(epoch_batches(5, 0, 1, 0, true).is_err());
    }

    proptest! {
        #[test]
        fn every_record_once_per_epoch(n in 0usize..200, bs in 1usize..40, seed in any::<u64>(), epoch in 0u64..5) {
            let mut seen: Vec<usize> = epoch_batches(n, bs, seed, epoch, true).unwrap().concat();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn scaler_round_trip(vals in proptest::collection::vec(-1e4f64..1e4, 3..30)) {
            let recs: Vec<TrackRecord> = vals.iter().enumerate().map(|(i, &v)| {
                let mut r = record(&i.to_string(), "a", 1.0);
                r.loudness = v;
                r
            }).collect();
            prop_assume!(vals.iter().any(|&v| (v - vals[0]).abs() > 1e-3));
            let s = FeatureScaler::fit(&recs, &[Feature::Loudness]).unwrap();
            for r in &recs {
                let back = s.inverse(&s.transform(r))[0];
                prop_assert!((back - r.loudness).abs() <= 1e-12 * r.loudness.abs().max(1.0));
            }
        }
    }
}
