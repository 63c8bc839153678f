//! WAV decoding and the small amount of sample-buffer plumbing needed
//! before spectrogram analysis: resampling and length fitting.
//!
//! Only uncompressed little-endian integer PCM (16 or 24 bit, mono or
//! stereo) is accepted. Stereo input is downmixed to mono by averaging
//! the two channels of each frame.

use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate the model is trained at.
pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// A mono buffer of samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if let Some(bad) = samples.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(Error::InvalidInput(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_source_id(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }
}

/// Integer PCM sample width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Sixteen,
    TwentyFour,
}

impl BitDepth {
    fn bits(self) -> u16 {
        match self {
            BitDepth::Sixteen => 16,
            BitDepth::TwentyFour => 24,
        }
    }

    fn full_scale(self) -> f64 {
        match self {
            BitDepth::Sixteen => 32_768.0,
            BitDepth::TwentyFour => 8_388_608.0,
        }
    }
}

struct FmtChunk {
    channels: u16,
    sample_rate: u32,
    depth: BitDepth,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::WavFormat(format!("fmt chunk too short ({} bytes)", body.len())));
    }
    let mut format = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let bits = read_u16(body, 14);

    if format == WAVE_FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(Error::WavFormat("extensible fmt chunk too short".into()));
        }
        // first two bytes of the sub-format GUID carry the real format tag
        format = read_u16(body, 24);
    }
    match format {
        WAVE_FORMAT_PCM => {}
        WAVE_FORMAT_IEEE_FLOAT => {
            return Err(Error::UnsupportedEncoding("IEEE float samples".into()))
        }
        other => {
            return Err(Error::UnsupportedEncoding(format!("format tag {other:#06x}")))
        }
    }
    let depth = match bits {
        16 => BitDepth::Sixteen,
        24 => BitDepth::TwentyFour,
        other => return Err(Error::UnsupportedEncoding(format!("{other}-bit PCM"))),
    };
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedEncoding(format!("{channels} channels")));
    }
    if sample_rate == 0 {
        return Err(Error::WavFormat("sample rate is zero".into()));
    }
    Ok(FmtChunk {
        channels,
        sample_rate,
        depth,
    })
}

/// Decode a RIFF/WAVE byte buffer into a mono clip.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::WavFormat("missing RIFF/WAVE signature".into()));
    }
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::WavFormat(format!(
                    "chunk `{}` overruns the file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        match id {
            b"fmt " => fmt = Some(parse_fmt(&bytes[start..end])?),
            b"data" => data = Some(&bytes[start..end]),
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| Error::WavFormat("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::WavFormat("no data chunk".into()))?;

    let width = usize::from(fmt.depth.bits() / 8);
    let frame_bytes = width * usize::from(fmt.channels);
    let frames = data.len() / frame_bytes;
    if frames == 0 {
        return Err(Error::EmptyAudio);
    }
    let scale = fmt.depth.full_scale();
    let sample_at = |at: usize| -> f64 {
        let raw = match fmt.depth {
            BitDepth::Sixteen => i32::from(i16::from_le_bytes([data[at], data[at + 1]])),
            BitDepth::TwentyFour => {
                i32::from_le_bytes([0, data[at], data[at + 1], data[at + 2]]) >> 8
            }
        };
        f64::from(raw) / scale
    };
    let samples = (0..frames)
        .map(|f| {
            let base = f * frame_bytes;
            if fmt.channels == 1 {
                sample_at(base)
            } else {
                (sample_at(base) + sample_at(base + width)) / 2.0
            }
        })
        .collect();
    AudioClip::new(samples, fmt.sample_rate, "")
}

/// Read and decode a WAV file; the file stem becomes the clip's source id.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(decode_wav(&bytes)?.with_source_id(id))
}

/// Encode one or more equal-length channels as integer PCM WAV bytes.
pub fn encode_wav_channels(channels: &[&[f64]], sample_rate: u32, depth: BitDepth) -> Vec<u8> {
    assert!(!channels.is_empty(), "at least one channel required");
    let frames = channels[0].len();
    assert!(
        channels.iter().all(|c| c.len() == frames),
        "channels must have equal length"
    );
    let n_ch = channels.len() as u16;
    let width = u32::from(depth.bits() / 8);
    let block_align = u32::from(n_ch) * width;
    let data_len = block_align * frames as u32;

    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&n_ch.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&depth.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());

    let scale = depth.full_scale();
    let (lo, hi) = (-scale, scale - 1.0);
    for f in 0..frames {
        for ch in channels {
            let q = (ch[f] * scale).round().clamp(lo, hi) as i32;
            match depth {
                BitDepth::Sixteen => out.extend_from_slice(&(q as i16).to_le_bytes()),
                BitDepth::TwentyFour => out.extend_from_slice(&q.to_le_bytes()[..3]),
            }
        }
    }
    out
}

pub fn encode_wav(clip: &AudioClip, depth: BitDepth) -> Vec<u8> {
    encode_wav_channels(&[clip.samples()], clip.sample_rate(), depth)
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(clip, depth)).map_err(|e| Error::io(path, e))
}

/// Linear-interpolation resampler.
///
/// Output length is `round(n * target / source)`; output sample `i` sits at
/// input position `i * source / target`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target sample rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let src = &clip.samples;
    let ratio = f64::from(clip.sample_rate) / f64::from(target_rate);
    let out_len = ((src.len() as f64) * f64::from(target_rate) / f64::from(clip.sample_rate))
        .round()
        .max(1.0) as usize;
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let left = (pos.floor() as usize).min(last);
            let right = (left + 1).min(last);
            let frac = pos - left as f64;
            let (a, b) = (src[left], src[right]);
            if frac <= 0.0 || a == b {
                a
            } else {
                a + (b - a) * frac.min(1.0)
            }
        })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    })
}

/// Center-crop or symmetrically zero-pad to exactly `target_samples`.
/// When the padding is odd the extra zero goes on the right.
pub fn fit_length(clip: &AudioClip, target_samples: usize) -> Result<AudioClip> {
    if target_samples == 0 {
        return Err(Error::InvalidInput("target length must be positive".into()));
    }
    let len = clip.samples.len();
    let samples = if len >= target_samples {
        let start = (len - target_samples) / 2;
        clip.samples[start..start + target_samples].to_vec()
    } else {
        let left = (target_samples - len) / 2;
        let mut v = vec![0.0; target_samples];
        v[left..left + len].copy_from_slice(&clip.samples);
        v
    };
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pcm16_mono(frames: &[i16], rate: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + 2 * frames.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * 2).to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(2 * frames.len() as u32).to_le_bytes());
        for f in frames {
            b.extend_from_slice(&f.to_le_bytes());
        }
        b
    }

    fn clip(samples: Vec<f64>, rate: u32) -> AudioClip {
        AudioClip::new(samples, rate, "t").unwrap()
    }

    #[test]
    fn decodes_16_bit_mono_scaling() {
        let clip = decode_wav(&pcm16_mono(&[0, 16384, -16384, 32767], 44_100)).unwrap();
        assert_eq!(clip.sample_rate(), 44_100);
        assert_eq!(&clip.samples()[..3], &[0.0, 0.5, -0.5]);
        assert!((clip.samples()[3] - 32767.0 / 32768.0).abs() < 1e-12);
    }

    #[test]
    fn stereo_downmix_is_frame_mean() {
        let l = [0.5];
        let r = [-0.5];
        let bytes = encode_wav_channels(&[&l, &r], 8000, BitDepth::Sixteen);
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.samples(), &[0.0]);
    }

    #[test]
    fn twenty_four_bit_round_trip() {
        let src = clip(vec![0.25, -0.75, 0.0, 0.123_456], 22_050);
        let back = decode_wav(&encode_wav(&src, BitDepth::TwentyFour)).unwrap();
        for (a, b) in src.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 0.5 / 8_388_608.0 + 1e-15);
        }
    }

    #[test]
    fn rejects_bad_containers() {
        assert!(matches!(decode_wav(b"RIFX0000WAVE"), Err(Error::WavFormat(_))));
        assert!(matches!(decode_wav(&[]), Err(Error::WavFormat(_))));

        let mut float = pcm16_mono(&[1, 2], 8000);
        float[20] = 3;
        assert!(matches!(decode_wav(&float), Err(Error::UnsupportedEncoding(_))));

        let mut adpcm = pcm16_mono(&[1, 2], 8000);
        adpcm[20] = 2;
        assert!(matches!(decode_wav(&adpcm), Err(Error::UnsupportedEncoding(_))));

        let empty = pcm16_mono(&[], 8000);
        assert!(matches!(decode_wav(&empty), Err(Error::EmptyAudio)));

        let mut truncated = pcm16_mono(&[1, 2, 3], 8000);
        truncated.truncate(truncated.len() - 3);
        assert!(matches!(decode_wav(&truncated), Err(Error::WavFormat(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let base = pcm16_mono(&[16384], 8000);
        let mut bytes = base[..12].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]); // odd size plus pad byte
        bytes.extend_from_slice(&base[12..]);
        assert_eq!(decode_wav(&bytes).unwrap().samples(), &[0.5]);
    }

    #[test]
    fn resample_identity_and_hand_cases() {
        let c = clip(vec![0.1, -0.2, 0.3], 44_100);
        assert_eq!(resample(&c, 44_100).unwrap(), c);

        let ramp = clip(vec![0.0, 0.1, 0.2, 0.3], 4);
        let down = resample(&ramp, 2).unwrap();
        assert_eq!(down.samples(), &[0.0, 0.2]);
        assert_eq!(down.sample_rate(), 2);

        let k = clip(vec![0.7; 100], 44_100);
        for rate in [8000, 22_050, 48_000, 96_000] {
            let r = resample(&k, rate).unwrap();
            assert!(r.samples().iter().all(|&s| s == 0.7));
            let back = resample(&r, 44_100).unwrap();
            assert!(back.samples().iter().all(|&s| s == 0.7));
        }
        assert!(resample(&k, 0).is_err());
    }

    #[test]
    fn fit_length_hand_cases() {
        let ten = clip((0..10).map(|i| i as f64 / 10.0).collect(), 8000);
        assert_eq!(fit_length(&ten, 10).unwrap(), ten);

        let four = clip(vec![0.1, 0.2, 0.3, 0.4], 8000);
        assert_eq!(fit_length(&four, 2).unwrap().samples(), &[0.2, 0.3]);

        let two = clip(vec![0.1, 0.2], 8000);
        assert_eq!(
            fit_length(&two, 5).unwrap().samples(),
            &[0.0, 0.1, 0.2, 0.0, 0.0]
        );
        assert!(fit_length(&two, 0).is_err());
    }

    proptest! {
        #[test]
        fn fit_length_always_hits_target(len in 1usize..300, target in 1usize..300) {
            let c = clip(vec![0.25; len], 8000);
            prop_assert_eq!(fit_length(&c, target).unwrap().len(), target);
        }

        #[test]
        fn pcm16_decode_encode_is_stable(raw in proptest::collection::vec(any::<i16>(), 1..200)) {
            let first = decode_wav(&pcm16_mono(&raw, 16_000)).unwrap();
            let second = decode_wav(&encode_wav(&first, BitDepth::Sixteen)).unwrap();
            for (a, b) in first.samples().iter().zip(second.samples()) {
                prop_assert!((a - b).abs() <= 1.0 / 32_768.0);
            }
        }
    }
}
