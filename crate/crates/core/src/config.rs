//! Run configuration: one flat TOML table whose keys mirror [`RunConfig`]
//! fields. Relative paths resolve against the config file's directory.
//!
//! ```toml
//! tracks_csv = "out/tracks.csv"
//! audio_dir = "audio"
//! out_dir = "out"
//! sample_rate = 22050
//! n_mels = 32
//! n_frames = 32
//! conv_filters = [16, 32, 64, 128]
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{model_features, Feature};
use crate::error::{Error, Result};
use crate::nn::NetConfig;
use crate::spectrogram::SpectrogramConfig;
use crate::training::TrainingConfig;

/// Name of the effective-configuration file every command writes.
pub const ECHO_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub catalog: Option<PathBuf>,
    pub tracks_csv: Option<PathBuf>,
    pub audio_dir: Option<PathBuf>,
    /// Defaults to `<out_dir>/features`.
    pub feature_cache: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    /// Clip length is derived as `n_fft + (n_frames - 1) * hop`.
    pub n_frames: usize,
    pub f_min: f64,
    /// Defaults to Nyquist.
    pub f_max: Option<f64>,
    pub floor_db: f64,

    pub conv_filters: Vec<usize>,
    pub meta_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub include_artist_features: bool,

    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub train_fraction: f64,
    /// Share of training artists held out for early stopping; 0 validates
    /// on the test side.
    pub validation_fraction: f64,

    pub threshold: f64,
    pub histogram_bins: usize,
    pub seed: u64,
    /// Threads for feature extraction.
    pub workers: usize,
    pub log_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            catalog: None,
            tracks_csv: None,
            audio_dir: None,
            feature_cache: None,
            out_dir: PathBuf::from("out"),
            sample_rate: 22_050,
            n_fft: 2048,
            hop: 512,
            n_mels: 128,
            n_frames: 256,
            f_min: 0.0,
            f_max: None,
            floor_db: -80.0,
            conv_filters: vec![16, 32, 64, 128],
            meta_hidden: vec![32, 32],
            head_hidden: vec![128, 64],
            include_artist_features: true,
            batch_size: 32,
            max_epochs: 25,
            learning_rate: 0.001,
            patience: 7,
            min_delta: 0.0,
            train_fraction: 0.8,
            validation_fraction: 0.0,
            threshold: 70.0,
            histogram_bins: 20,
            seed: 0,
            workers: 4,
            log_wall_time: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Parse, then resolve relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.catalog,
            &mut self.tracks_csv,
            &mut self.audio_dir,
            &mut self.feature_cache,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out_dir);
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Write the effective configuration into the output directory.
    pub fn write_echo(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join(ECHO_FILE);
        std::fs::write(&path, self.to_toml_string()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn feature_cache_dir(&self) -> PathBuf {
        self.feature_cache
            .clone()
            .unwrap_or_else(|| self.out_dir.join("features"))
    }

    pub fn spectrogram(&self) -> SpectrogramConfig {
        SpectrogramConfig {
            n_fft: self.n_fft,
            hop: self.hop,
            n_mels: self.n_mels,
            f_min: self.f_min,
            f_max: self.f_max.unwrap_or(f64::from(self.sample_rate) / 2.0),
            floor_db: self.floor_db,
        }
    }

    pub fn clip_samples(&self) -> usize {
        self.spectrogram().samples_for_frames(self.n_frames)
    }

    pub fn features(&self) -> Vec<Feature> {
        model_features(self.include_artist_features)
    }

    pub fn net(&self) -> NetConfig {
        NetConfig {
            conv_filters: self.conv_filters.clone(),
            meta_dim: self.features().len(),
            meta_hidden: self.meta_hidden.clone(),
            head_hidden: self.head_hidden.clone(),
            input_mels: self.n_mels,
            input_frames: self.n_frames,
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            learning_rate: self.learning_rate,
            patience: self.patience,
            min_delta: self.min_delta,
            seed: self.seed,
        }
    }

    /// Value checks; every error names the offending key.
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str, e: Error| Error::Config(format!("key `{k}`: {}", strip(e)));
        if self.sample_rate == 0 {
            return Err(Error::Config("key `sample_rate`: must be positive".into()));
        }
        if self.n_frames == 0 {
            return Err(Error::Config("key `n_frames`: must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("key `workers`: must be positive".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("key `histogram_bins`: must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 100.0) {
            return Err(Error::Config(format!("key `threshold`: {} outside (0, 100)", self.threshold)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "key `train_fraction`: {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "key `validation_fraction`: {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        self.spectrogram()
            .validate(self.sample_rate)
            .map_err(|e| key("n_fft/hop/n_mels/f_min/f_max/floor_db", e))?;
        self.net().validate().map_err(|e| key("conv_filters/n_mels/n_frames", e))?;
        let t = self.training();
        for (name, bad) in [
            ("batch_size", t.batch_size == 0),
            ("max_epochs", t.max_epochs == 0),
            ("learning_rate", !(t.learning_rate > 0.0 && t.learning_rate.is_finite())),
            ("patience", t.patience == 0),
            ("min_delta", !(t.min_delta >= 0.0 && t.min_delta.is_finite())),
        ] {
            if bad {
                return Err(Error::Config(format!("key `{name}`: out of range")));
            }
        }
        Ok(())
    }

    /// Fail unless `path` is set and exists.
    pub fn require_path<'a>(&self, name: &str, path: &'a Option<PathBuf>) -> Result<&'a Path> {
        let p = path
            .as_deref()
            .ok_or_else(|| Error::Config(format!("key `{name}`: required for this command")))?;
        if !p.exists() {
            return Err(Error::Config(format!("key `{name}`: {} does not exist", p.display())));
        }
        Ok(p)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
