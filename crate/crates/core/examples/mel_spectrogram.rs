//! Log-mel spectrogram of a 1 kHz tone; the loudest band sits nearest 1 kHz.

use anyhow::Result;
use songpop::audio::AudioClip;
use songpop::spectrogram::{mel_band_centers, mel_spectrogram, SpectrogramConfig};

fn main() -> Result<()> {
    let sr = 22_050;
    let samples: Vec<f64> = (0..sr).map(|i| 0.8 * (i as f64 * 1000.0 * std::f64::consts::TAU / sr as f64).sin()).collect();
    let clip = AudioClip::new(samples, sr as u32, "tone")?;
    let cfg = SpectrogramConfig {
        n_mels: 40,
        ..SpectrogramConfig::for_sample_rate(sr as u32)
    };
    let spec = mel_spectrogram(&clip, &cfg)?;
    println!("{} bands x {} frames", spec.n_mels, spec.n_frames);

    let centers = mel_band_centers(&cfg);
    let mid = spec.n_frames / 2;
    let (band, db) = (0..spec.n_mels)
        .map(|b| (b, spec.get(b, mid)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    println!("peak band {band} (center {:.1} Hz) at {db:.2} dB", centers[band]);
    for b in band.saturating_sub(2)..(band + 3).min(spec.n_mels) {
        println!("  band {b:>2}  {:>8.1} Hz  {:>7.2} dB", centers[b], spec.get(b, mid));
    }
    Ok(())
}
