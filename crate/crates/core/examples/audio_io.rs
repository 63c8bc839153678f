//! Write a stereo 24-bit WAV, decode it back (downmixed to mono), resample
//! to 22.05 kHz and center-crop to two seconds.

use anyhow::Result;
use songpop::audio::{decode_wav, encode_wav_channels, fit_length, resample, BitDepth};

fn main() -> Result<()> {
    let sr = 44_100;
    let left: Vec<f64> = (0..sr * 3).map(|i| 0.5 * (i as f64 * 440.0 * std::f64::consts::TAU / sr as f64).sin()).collect();
    let right: Vec<f64> = left.iter().map(|s| -0.5 * s).collect();
    let bytes = encode_wav_channels(&[&left, &right], sr as u32, BitDepth::TwentyFour);
    println!("encoded {} bytes", bytes.len());

    let clip = decode_wav(&bytes)?;
    println!("decoded {} samples at {} Hz", clip.len(), clip.sample_rate());
    let clip = resample(&clip, 22_050)?;
    let clip = fit_length(&clip, 44_100)?;
    println!("resampled and fitted to {} samples at {} Hz", clip.len(), clip.sample_rate());
    Ok(())
}
