//! Log-power mel spectrogram: Hann-windowed STFT, HTK mel filterbank,
//! dB conversion normalized to the per-clip maximum.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use sha2::{Digest, Sha256};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Power floor applied before taking the logarithm.
pub const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub floor_db: f64,
}

impl SpectrogramConfig {
    /// n_fft 2048, hop 512, 128 bands from 0 Hz to Nyquist, -80 dB floor.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        Self {
            n_fft: 2048,
            hop: 512,
            n_mels: 128,
            f_min: 0.0,
            f_max: f64::from(sample_rate) / 2.0,
            floor_db: -80.0,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = f64::from(sample_rate) / 2.0;
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Config(format!(
                "hop must be in 1..={} (got {})",
                self.n_fft, self.hop
            )));
        }
        if self.n_fft < 2 {
            return Err(Error::Config("n_fft must be at least 2".into()));
        }
        if self.n_mels < 2 {
            return Err(Error::Config("n_mels must be at least 2".into()));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(Error::Config(format!(
                "need 0 <= f_min < f_max <= {nyquist} (got {} / {})",
                self.f_min, self.f_max
            )));
        }
        if !(self.floor_db.is_finite() && self.floor_db < 0.0) {
            return Err(Error::Config("floor_db must be a finite negative value".into()));
        }
        Ok(())
    }

    /// Number of frames produced for a clip of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop
        }
    }

    /// Clip length that yields exactly `n_frames` frames.
    pub fn samples_for_frames(&self, n_frames: usize) -> usize {
        self.n_fft + n_frames.saturating_sub(1) * self.hop
    }

    /// Stable digest of every field, used to key cached features.
    pub fn digest(&self, sample_rate: u32) -> String {
        let canon = format!(
            "sr={sample_rate};n_fft={};hop={};n_mels={};f_min={:?};f_max={:?};floor_db={:?}",
            self.n_fft, self.hop, self.n_mels, self.f_min, self.f_max, self.floor_db
        );
        Sha256::digest(canon.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Symmetric Hann window, `w[i] = 0.5 (1 - cos(2 pi i / (n - 1)))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("Hann window needs n >= 2, got {n}")));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos()))
        .collect())
}

/// One-sided STFT, stored frame-major.
#[derive(Debug, Clone)]
pub struct Stft {
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
}

impl Stft {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }
}

pub fn stft(clip: &AudioClip, cfg: &SpectrogramConfig) -> Result<Stft> {
    let x = clip.samples();
    if x.len() < cfg.n_fft {
        return Err(Error::TooShort {
            len: x.len(),
            n_fft: cfg.n_fft,
        });
    }
    if cfg.hop == 0 {
        return Err(Error::Config("hop must be positive".into()));
    }
    let window = hann_window(cfg.n_fft)?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let bins = cfg.n_fft / 2 + 1;
    let frames = cfg.frame_count(x.len());

    let mut data = Vec::with_capacity(bins * frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (slot, (&s, &w)) in buf.iter_mut().zip(x[start..].iter().zip(&window)) {
            *slot = Complex64::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Stft { bins, frames, data })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// The `n_mels + 2` filter breakpoints in Hz, equally spaced on the mel scale.
pub fn mel_breakpoints(cfg: &SpectrogramConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let steps = (cfg.n_mels + 1) as f64;
    let mut bp: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / steps))
        .collect();
    // pin the end points so they do not drift through the log round trip
    bp[0] = cfg.f_min;
    bp[cfg.n_mels + 1] = cfg.f_max;
    bp
}

/// Peak frequency of every band.
pub fn mel_band_centers(cfg: &SpectrogramConfig) -> Vec<f64> {
    let bp = mel_breakpoints(cfg);
    bp[1..=cfg.n_mels].to_vec()
}

/// Triangular filters with unit peak, one row per band.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, band: usize) -> &[f64] {
        &self.weights[band * self.n_bins..(band + 1) * self.n_bins]
    }

    /// Project one frame of power values onto the mel bands.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (band, o) in out.iter_mut().enumerate() {
            *o = self.row(band).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

pub fn mel_filterbank(cfg: &SpectrogramConfig, sample_rate: u32) -> Result<MelFilterbank> {
    cfg.validate(sample_rate)?;
    let n_bins = cfg.n_fft / 2 + 1;
    let bin_hz = f64::from(sample_rate) / cfg.n_fft as f64;
    let bp = mel_breakpoints(cfg);
    let mut weights = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (left, center, right) = (bp[m], bp[m + 1], bp[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            *w = rise.min(fall).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::DegenerateFilterbank { band: m });
        }
    }
    Ok(MelFilterbank {
        n_mels: cfg.n_mels,
        n_bins,
        weights,
    })
}

/// Log-mel grid, `n_mels` rows by `n_frames` columns, row-major, in dB
/// relative to the loudest cell of the clip.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
    pub config: SpectrogramConfig,
    pub sample_rate: u32,
    pub source_id: String,
}

impl MelSpectrogram {
    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.n_frames + frame]
    }
}

/// Mel-projected power, row-major `[n_mels x n_frames]`, before any log scaling.
pub fn mel_power(clip: &AudioClip, cfg: &SpectrogramConfig) -> Result<Vec<f64>> {
    let bank = mel_filterbank(cfg, clip.sample_rate())?;
    mel_power_with(clip, cfg, &bank)
}

fn mel_power_with(clip: &AudioClip, cfg: &SpectrogramConfig, bank: &MelFilterbank) -> Result<Vec<f64>> {
    let spec = stft(clip, cfg)?;
    let frames = spec.frames();
    let mut grid = vec![0.0; cfg.n_mels * frames];
    let mut power = vec![0.0; spec.bins()];
    let mut bands = vec![0.0; cfg.n_mels];
    for t in 0..frames {
        for (p, c) in power.iter_mut().zip(spec.frame(t)) {
            *p = c.norm_sqr();
        }
        bank.apply(&power, &mut bands);
        for (m, &v) in bands.iter().enumerate() {
            grid[m * frames + t] = v;
        }
    }
    Ok(grid)
}

/// `10 log10(max(p, POWER_FLOOR))`.
pub fn power_to_db(power: f64) -> f64 {
    10.0 * power.max(POWER_FLOOR).log10()
}

pub fn mel_spectrogram(clip: &AudioClip, cfg: &SpectrogramConfig) -> Result<MelSpectrogram> {
    let bank = mel_filterbank(cfg, clip.sample_rate())?;
    mel_spectrogram_with(clip, cfg, &bank)
}

/// Same as [`mel_spectrogram`] but reuses a prebuilt filterbank.
pub fn mel_spectrogram_with(
    clip: &AudioClip,
    cfg: &SpectrogramConfig,
    bank: &MelFilterbank,
) -> Result<MelSpectrogram> {
    let power = mel_power_with(clip, cfg, bank)?;
    let n_frames = power.len() / cfg.n_mels;
    let db: Vec<f64> = power.iter().map(|&p| power_to_db(p)).collect();
    let peak = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // cells at the power floor carry no energy; they map to the floor
    // regardless of the clip's peak so digital silence stays at floor_db
    let values = power
        .iter()
        .zip(&db)
        .map(|(&p, &d)| {
            if p <= POWER_FLOOR {
                cfg.floor_db
            } else {
                (d - peak).max(cfg.floor_db)
            }
        })
        .collect();
    Ok(MelSpectrogram {
        n_mels: cfg.n_mels,
        n_frames,
        values,
        config: cfg.clone(),
        sample_rate: clip.sample_rate(),
        source_id: clip.source_id().to_string(),
    })
}

const DUMP_MAGIC: &[u8; 8] = b"SPMEL\0\0\x01";

/// Write the feature-cache file: header (magic, dims, config echo, source id)
/// followed by row-major little-endian f32 cells.
pub fn write_feature_dump(w: &mut impl Write, spec: &MelSpectrogram) -> std::io::Result<()> {
    let c = &spec.config;
    w.write_all(DUMP_MAGIC)?;
    for v in [spec.n_mels, spec.n_frames, c.n_fft, c.hop] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&spec.sample_rate.to_le_bytes())?;
    for v in [c.f_min, c.f_max, c.floor_db] {
        w.write_all(&v.to_le_bytes())?;
    }
    let id = spec.source_id.as_bytes();
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id)?;
    for &v in &spec.values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_feature_dump(r: &mut impl Read) -> Result<MelSpectrogram> {
    fn bad(msg: &str) -> Error {
        Error::InvalidInput(format!("feature dump: {msg}"))
    }
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| bad(&e.to_string()))?;
    let mut cur = buf.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != DUMP_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32s = [0u32; 5];
    for v in &mut u32s {
        *v = u32::from_le_bytes(take(4)?.try_into().unwrap());
    }
    let mut f64s = [0f64; 3];
    for v in &mut f64s {
        *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    let id_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let source_id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| bad("source id"))?;
    let [n_mels, n_frames, n_fft, hop, sample_rate] = u32s;
    let (n_mels, n_frames) = (n_mels as usize, n_frames as usize);
    let cells = n_mels * n_frames;
    let raw = take(cells * 4)?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Ok(MelSpectrogram {
        n_mels,
        n_frames,
        values,
        config: SpectrogramConfig {
            n_fft: n_fft as usize,
            hop: hop as usize,
            n_mels,
            f_min: f64s[0],
            f_max: f64s[1],
            floor_db: f64s[2],
        },
        sample_rate,
        source_id,
    })
}

pub fn save_feature_dump(path: impl AsRef<Path>, spec: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_feature_dump(&mut bytes, spec).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_feature_dump(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_dump(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(sr: u32) -> SpectrogramConfig {
        SpectrogramConfig {
            n_fft: 512,
            hop: 128,
            n_mels: 32,
            f_min: 0.0,
            f_max: f64::from(sr) / 2.0,
            floor_db: -80.0,
        }
    }

    fn sine(freq: f64, sr: u32, len: usize, amp: f64) -> AudioClip {
        let s = (0..len)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / f64::from(sr)).sin())
            .collect();
        AudioClip::new(s, sr, "sine").unwrap()
    }

    #[test]
    fn hann_closed_form() {
        let w = hann_window(4).unwrap();
        let expected = [0.0, 0.75, 0.75, 0.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        for n in 2..64 {
            let w = hann_window(n).unwrap();
            assert!(w[0].abs() < 1e-15 && w[n - 1].abs() < 1e-15);
            for i in 0..n {
                assert!((w[i] - w[n - 1 - i]).abs() < 1e-12);
            }
        }
        assert!(matches!(hann_window(1), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn stft_dc_and_frame_count() {
        let cfg = SpectrogramConfig {
            n_fft: 1024,
            hop: 512,
            ..small_cfg(8000)
        };
        let ones = AudioClip::new(vec![1.0; 2048], 8000, "dc").unwrap();
        let s = stft(&ones, &cfg).unwrap();
        assert_eq!(s.frames(), 3);
        assert_eq!(s.bins(), 513);
        let wsum: f64 = hann_window(1024).unwrap().iter().sum();
        for t in 0..3 {
            assert!((s.get(0, t).norm() - wsum).abs() < 1e-9);
            // the symmetric window's spectrum has a main lobe of width two
            // bins plus a small periodic-mismatch tail
            for k in 2..s.bins() {
                assert!(s.get(k, t).norm() < 1e-3 * wsum, "bin {k} = {}", s.get(k, t).norm());
            }
        }
        let short = AudioClip::new(vec![0.0; 100], 8000, "x").unwrap();
        assert!(matches!(stft(&short, &cfg), Err(Error::TooShort { .. })));
    }

    #[test]
    fn stft_prefix_frames_match_on_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = small_cfg(8000);
        let base: Vec<f64> = (0..cfg.n_fft + 7 * cfg.hop + cfg.hop - cfg.n_fft % cfg.hop)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let len = cfg.n_fft + 7 * cfg.hop;
        let base = &base[..len];
        let a = stft(&AudioClip::new(base.to_vec(), 8000, "a").unwrap(), &cfg).unwrap();
        let doubled: Vec<f64> = base.iter().chain(base).copied().collect();
        let b = stft(&AudioClip::new(doubled, 8000, "b").unwrap(), &cfg).unwrap();
        for t in 0..a.frames() {
            assert_eq!(a.frame(t), b.frame(t));
        }
    }

    #[test]
    fn mel_scale_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(1000.0) - 999.985_6).abs() < 1e-3);
        for f in [0.0, 50.0, 440.0, 8000.0, 22_050.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_rows_are_triangles() {
        let cfg = SpectrogramConfig::for_sample_rate(44_100);
        let bank = mel_filterbank(&cfg, 44_100).unwrap();
        for m in 0..bank.n_mels() {
            let row = bank.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert_eq!(row[0], 0.0);
            assert_eq!(*row.last().unwrap(), 0.0);
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
        // support overlaps only between neighbours
        for m in 0..bank.n_mels() {
            for other in m + 2..bank.n_mels() {
                assert!(bank
                    .row(m)
                    .iter()
                    .zip(bank.row(other))
                    .all(|(a, b)| *a == 0.0 || *b == 0.0));
            }
        }
        let bin_hz = 44_100.0 / cfg.n_fft as f64;
        for k in 1..bank.n_bins() {
            let f = k as f64 * bin_hz;
            if f > cfg.f_min && f < cfg.f_max {
                let total: f64 = (0..bank.n_mels()).map(|m| bank.row(m)[k]).sum();
                assert!(total > 0.0, "bin {k} uncovered");
            }
        }
    }

    #[test]
    fn too_many_mels_is_degenerate() {
        let cfg = SpectrogramConfig {
            n_fft: 64,
            hop: 32,
            n_mels: 60,
            f_min: 0.0,
            f_max: 4000.0,
            floor_db: -80.0,
        };
        assert!(matches!(
            mel_filterbank(&cfg, 8000),
            Err(Error::DegenerateFilterbank { .. })
        ));
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let cfg = small_cfg(8000);
        let clip = AudioClip::new(vec![0.0; 4096], 8000, "quiet").unwrap();
        let spec = mel_spectrogram(&clip, &cfg).unwrap();
        assert_eq!(spec.n_frames, 1 + (4096 - 512) / 128);
        assert!(spec.values.iter().all(|&v| v == -80.0));
    }

    #[test]
    fn values_within_floor_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s: Vec<f64> = (0..6000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let clip = AudioClip::new(s, 16_000, "n").unwrap();
        let spec = mel_spectrogram(&clip, &small_cfg(16_000)).unwrap();
        assert!(spec.values.iter().all(|&v| (-80.0..=0.0).contains(&v)));
        assert!(spec.values.iter().any(|&v| v == 0.0));
    }

    #[test]
    fn doubling_amplitude_adds_six_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<f64> = (0..4096).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let cfg = small_cfg(8000);
        let quiet = AudioClip::new(s.clone(), 8000, "q").unwrap();
        let loud = AudioClip::new(s.iter().map(|v| 2.0 * v).collect(), 8000, "l").unwrap();
        let pq = mel_power(&quiet, &cfg).unwrap();
        let pl = mel_power(&loud, &cfg).unwrap();
        for (a, b) in pq.iter().zip(&pl) {
            let diff = power_to_db(*b) - power_to_db(*a);
            assert!((diff - 6.0206).abs() < 0.01, "diff {diff}");
        }
    }

    #[test]
    fn pure_tone_peaks_in_nearest_band() {
        let sr = 22_050;
        let cfg = SpectrogramConfig {
            n_fft: 2048,
            hop: 512,
            n_mels: 40,
            f_min: 0.0,
            f_max: f64::from(sr) / 2.0,
            floor_db: -80.0,
        };
        let spec = mel_spectrogram(&sine(1000.0, sr, 8192, 0.5), &cfg).unwrap();
        let centers = mel_band_centers(&cfg);
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        for t in 0..spec.n_frames {
            let best = (0..spec.n_mels)
                .max_by(|&a, &b| spec.get(a, t).total_cmp(&spec.get(b, t)))
                .unwrap();
            assert_eq!(best, nearest, "frame {t}");
        }
    }

    #[test]
    fn feature_dump_round_trip() {
        let clip = sine(440.0, 8000, 3000, 0.3);
        let spec = mel_spectrogram(&clip, &small_cfg(8000)).unwrap();
        let mut bytes = Vec::new();
        write_feature_dump(&mut bytes, &spec).unwrap();
        let back = read_feature_dump(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.config, spec.config);
        assert_eq!((back.n_mels, back.n_frames), (spec.n_mels, spec.n_frames));
        assert_eq!(back.source_id, "sine");
        for (a, b) in back.values.iter().zip(&spec.values) {
            assert_eq!(*a, f64::from(*b as f32));
        }
        assert!(read_feature_dump(&mut &bytes[..20]).is_err());
    }
}
