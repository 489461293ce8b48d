//! Bit-exact reading and writing of PCM16 mono WAV clips.
//!
//! Only one audio format exists in this project: RIFF/WAVE, PCM format
//! code 1, one channel, 16 bits per sample, 16 kHz, little-endian. Anything
//! else is rejected rather than converted so the attack's sample-index
//! semantics stay exact. Unknown RIFF chunks (LIST, fact, ...) are skipped.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

/// Canonical sample rate in Hz.
pub const CANONICAL_RATE: u32 = 16000;
/// Canonical clip length: exactly one second at the canonical rate.
pub const CANONICAL_SAMPLES: usize = 16000;

#[derive(Debug, Error)]
pub enum AudioError {
    /// Bad RIFF/WAVE magic or structurally broken container.
    #[error("not a WAV file: {0}")]
    NotWav(String),
    /// Valid WAV but not PCM16 mono 16 kHz; names the offending field.
    #[error("unsupported format: {field} is {value}, expected {expected}")]
    UnsupportedFormat {
        field: &'static str,
        value: u32,
        expected: u32,
    },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Fixed-rate mono PCM16 sample vector; the attack's search space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
    pub label: Option<String>,
}

impl AudioClip {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn read_u16(bytes: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([bytes[off], bytes[off + 1]])
}

fn read_u32(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
}

/// Reads a PCM16 mono 16 kHz WAV file, decoding samples exactly as stored.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let bytes = fs::read(path.as_ref())?;
    let clip = parse_wav(&bytes)?;
    Ok(clip)
}

/// Parses WAV bytes. Split out of [`read_wav`] so in-memory buffers can be
/// decoded in tests.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::NotWav("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(AudioError::NotWav("missing RIFF magic".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotWav("missing WAVE magic".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut off = 12usize;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = read_u32(bytes, off + 4) as usize;
        let body_start = off + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        let body_end = match body_end {
            Some(e) => e,
            None => return Err(AudioError::NotWav("chunk overruns file".into())),
        };
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::NotWav("fmt chunk too small".into()));
                }
                fmt = Some((
                    read_u16(bytes, body_start),
                    read_u16(bytes, body_start + 2),
                    read_u32(bytes, body_start + 4),
                    read_u16(bytes, body_start + 14),
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {} // skip LIST and friends
        }
        // chunks are word-aligned
        off = body_end + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| AudioError::NotWav("no fmt chunk".into()))?;
    if format != 1 {
        return Err(AudioError::UnsupportedFormat {
            field: "format",
            value: format as u32,
            expected: 1,
        });
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedFormat {
            field: "channels",
            value: channels as u32,
            expected: 1,
        });
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedFormat {
            field: "bits_per_sample",
            value: bits as u32,
            expected: 16,
        });
    }
    if rate != CANONICAL_RATE {
        return Err(AudioError::UnsupportedFormat {
            field: "sample_rate",
            value: rate,
            expected: CANONICAL_RATE,
        });
    }

    let data = data.ok_or_else(|| AudioError::NotWav("no data chunk".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    Ok(AudioClip::new(samples, rate))
}

/// Serializes a clip as a canonical 44-byte-header PCM16 mono WAV.
pub fn wav_bytes(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() as u32 * 2;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &clip.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Writes a clip to disk; identical clips produce byte-identical files.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    fs::write(path.as_ref(), wav_bytes(clip))?;
    Ok(())
}

/// Zero-pads at the tail or truncates at the tail to exactly `target_samples`.
pub fn pad_or_trim(clip: &AudioClip, target_samples: usize) -> AudioClip {
    assert!(target_samples > 0, "target_samples must be positive");
    let mut samples = clip.samples.clone();
    samples.resize(target_samples, 0);
    AudioClip {
        samples,
        sample_rate: clip.sample_rate,
        label: clip.label.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// 44-byte header constructed by hand, followed by samples [0, 1, -1].
    fn minimal_wav_bytes() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&42u32.to_le_bytes()); // 36 + 6
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&16000u32.to_le_bytes());
        b.extend_from_slice(&32000u32.to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&6u32.to_le_bytes());
        b.extend_from_slice(&0i16.to_le_bytes());
        b.extend_from_slice(&1i16.to_le_bytes());
        b.extend_from_slice(&(-1i16).to_le_bytes());
        b
    }

    #[test]
    fn parses_minimal_hand_built_wav() {
        let clip = parse_wav(&minimal_wav_bytes()).unwrap();
        assert_eq!(clip.samples, vec![0, 1, -1]);
        assert_eq!(clip.sample_rate, 16000);
    }

    #[test]
    fn writer_matches_hand_built_golden_bytes() {
        let clip = AudioClip::new(vec![0, 1, -1], 16000);
        assert_eq!(wav_bytes(&clip), minimal_wav_bytes());
    }

    #[test]
    fn stereo_is_rejected_naming_channels() {
        let mut b = minimal_wav_bytes();
        b[22] = 2; // channel count
        let err = parse_wav(&b).unwrap_err();
        match err {
            AudioError::UnsupportedFormat { field, value, .. } => {
                assert_eq!(field, "channels");
                assert_eq!(value, 2);
            }
            other => panic!("expected UnsupportedFormat, got {other:?}"),
        }
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let mut b = minimal_wav_bytes();
        b[24..28].copy_from_slice(&8000u32.to_le_bytes());
        assert!(matches!(
            parse_wav(&b),
            Err(AudioError::UnsupportedFormat {
                field: "sample_rate",
                ..
            })
        ));
    }

    #[test]
    fn not_wav_magic() {
        assert!(matches!(parse_wav(b"JUNKJUNKJUNK"), Err(AudioError::NotWav(_))));
    }

    #[test]
    fn extra_chunks_are_skipped() {
        // RIFF + LIST chunk before fmt/data
        let inner = minimal_wav_bytes();
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(42u32 + 12).to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"LIST");
        b.extend_from_slice(&4u32.to_le_bytes());
        b.extend_from_slice(b"INFO");
        b.extend_from_slice(&inner[12..]);
        let clip = parse_wav(&b).unwrap();
        assert_eq!(clip.samples, vec![0, 1, -1]);
    }

    #[test]
    fn data_chunk_size_is_twice_sample_count() {
        let clip = AudioClip::new(vec![5; 123], 16000);
        let bytes = wav_bytes(&clip);
        assert_eq!(read_u32(&bytes, 40), 246);
    }

    #[test]
    fn pad_or_trim_cases() {
        let short = AudioClip::new(vec![7; 15000], 16000);
        let padded = pad_or_trim(&short, 16000);
        assert_eq!(padded.len(), 16000);
        assert!(padded.samples[15000..].iter().all(|&s| s == 0));

        let exact = AudioClip::new(vec![7; 16000], 16000);
        assert_eq!(pad_or_trim(&exact, 16000), exact);

        let long = AudioClip::new((0..17000).map(|i| (i % 100) as i16).collect(), 16000);
        let trimmed = pad_or_trim(&long, 16000);
        assert_eq!(trimmed.samples[..], long.samples[..16000]);
    }

    #[test]
    fn pad_or_trim_idempotent_at_target() {
        let clip = AudioClip::new(vec![3; 12345], 16000);
        let once = pad_or_trim(&clip, 16000);
        assert_eq!(pad_or_trim(&once, 16000), once);
    }

    #[test]
    fn write_then_read_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let clip = AudioClip::new(vec![-32768, 32767, 0, 42], 16000);
        write_wav(&clip, &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples, clip.samples);
        // determinism: second write is byte-identical
        let first = fs::read(&path).unwrap();
        write_wav(&clip, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    proptest! {
        #[test]
        fn roundtrip_identity(samples in proptest::collection::vec(any::<i16>(), 0..4000)) {
            let clip = AudioClip::new(samples, 16000);
            let back = parse_wav(&wav_bytes(&clip)).unwrap();
            prop_assert_eq!(back.samples, clip.samples);
            prop_assert_eq!(back.sample_rate, clip.sample_rate);
        }
    }
}
