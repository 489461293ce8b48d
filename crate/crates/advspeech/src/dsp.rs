//! Deterministic MFCC front-end.
//!
//! Pipeline per frame: normalize to [-1, 1) by dividing by 32768, periodic
//! Hann window, zero-pad to `fft_size`, magnitude-squared DFT, triangular
//! mel filterbank, `ln(energy + log_floor)`, orthonormal DCT-II, keep the
//! first `num_cepstra` coefficients.
//!
//! DFT convention: unscaled forward transform, so for a length-N frame
//! `sum_k |X[k]|^2 == N * sum_n x[n]^2` (Parseval). The power spectrum is the
//! one-sided `|X[k]|^2` for k in 0..=fft_size/2 with no extra scaling.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::audio_io::AudioClip;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("clip too short: {len} samples, need at least {frame_length}")]
    ClipTooShort { len: usize, frame_length: usize },
    #[error("invalid dsp config: {0}")]
    InvalidConfig(String),
    #[error("degenerate mel filter: centers {a} and {b} map to the same FFT bin")]
    DegenerateFilter { a: usize, b: usize },
}

/// MFCC extraction parameters. All experiments vary these through one object.
#[derive(Debug, Clone, PartialEq)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
    pub num_mel_filters: usize,
    pub num_cepstra: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frame_length: 480, // 30 ms
            hop_length: 160,   // 10 ms
            fft_size: 512,
            num_mel_filters: 40,
            num_cepstra: 10,
            fmin: 20.0,
            fmax: 7600.0,
            log_floor: 1e-6,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if !self.fft_size.is_power_of_two() {
            return Err(DspError::InvalidConfig(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.fft_size < self.frame_length {
            return Err(DspError::InvalidConfig(format!(
                "fft_size {} < frame_length {}",
                self.fft_size, self.frame_length
            )));
        }
        if self.hop_length == 0 || self.hop_length > self.frame_length {
            return Err(DspError::InvalidConfig(format!(
                "hop_length {} must be in 1..=frame_length {}",
                self.hop_length, self.frame_length
            )));
        }
        if self.fmin >= self.fmax {
            return Err(DspError::InvalidConfig(format!(
                "fmin {} must be below fmax {}",
                self.fmin, self.fmax
            )));
        }
        if self.fmax > self.sample_rate as f64 / 2.0 {
            return Err(DspError::InvalidConfig(format!(
                "fmax {} above Nyquist {}",
                self.fmax,
                self.sample_rate as f64 / 2.0
            )));
        }
        if self.num_cepstra > self.num_mel_filters {
            return Err(DspError::InvalidConfig(format!(
                "num_cepstra {} > num_mel_filters {}",
                self.num_cepstra, self.num_mel_filters
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(DspError::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }

    /// Number of frames produced from a clip of `clip_len` samples.
    pub fn num_frames(&self, clip_len: usize) -> usize {
        (clip_len - self.frame_length) / self.hop_length + 1
    }
}

/// MFCC frames x coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// `num_frames` rows of `num_cepstra` coefficients each.
    pub values: Vec<Vec<f64>>,
    pub num_cepstra: usize,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.values.len()
    }
}

/// mel(f) = 2595 * log10(1 + f/700)
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `num_mel_filters x (fft_size/2 + 1)`.
///
/// Centers are equally spaced on the mel scale between mel(fmin) and
/// mel(fmax); triangles are evaluated per FFT bin against the exact center
/// frequencies in Hz.
pub fn mel_filterbank(config: &DspConfig) -> Result<Vec<Vec<f64>>, DspError> {
    config.validate()?;
    let num_bins = config.fft_size / 2 + 1;
    let bin_hz = config.sample_rate as f64 / config.fft_size as f64;
    let mel_lo = hz_to_mel(config.fmin);
    let mel_hi = hz_to_mel(config.fmax);
    let m = config.num_mel_filters;

    // m filters need m + 2 edge points
    let edges_hz: Vec<f64> = (0..m + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (m + 1) as f64))
        .collect();

    // adjacent centers collapsing onto one bin means the config oversamples
    // the mel axis for this fft_size
    for w in edges_hz.windows(2) {
        let a = (w[0] / bin_hz).round() as usize;
        let b = (w[1] / bin_hz).round() as usize;
        if a == b {
            return Err(DspError::DegenerateFilter { a, b });
        }
    }

    let mut bank = vec![vec![0.0; num_bins]; m];
    for (f, row) in bank.iter_mut().enumerate() {
        let (left, center, right) = (edges_hz[f], edges_hz[f + 1], edges_hz[f + 2]);
        for (bin, w) in row.iter_mut().enumerate() {
            let freq = bin as f64 * bin_hz;
            if freq > left && freq < center {
                *w = (freq - left) / (center - left);
            } else if (freq - center).abs() < 1e-12 {
                *w = 1.0;
            } else if freq > center && freq < right {
                *w = (right - freq) / (right - center);
            }
        }
    }
    Ok(bank)
}

/// Orthonormal DCT-II matrix, `num_cepstra x num_inputs`.
pub fn dct_matrix(num_cepstra: usize, num_inputs: usize) -> Vec<Vec<f64>> {
    let m = num_inputs as f64;
    (0..num_cepstra)
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            (0..num_inputs)
                .map(|n| {
                    scale
                        * (std::f64::consts::PI * k as f64 * (2.0 * n as f64 + 1.0) / (2.0 * m))
                            .cos()
                })
                .collect()
        })
        .collect()
}

/// Splits a PCM vector into overlapping frames normalized to [-1, 1).
///
/// Frame `i` covers samples `[i*hop, i*hop + frame_length)`.
pub fn frame_signal(samples: &[i16], config: &DspConfig) -> Result<Vec<Vec<f64>>, DspError> {
    if samples.len() < config.frame_length {
        return Err(DspError::ClipTooShort {
            len: samples.len(),
            frame_length: config.frame_length,
        });
    }
    let n = config.num_frames(samples.len());
    Ok((0..n)
        .map(|i| {
            samples[i * config.hop_length..i * config.hop_length + config.frame_length]
                .iter()
                .map(|&s| s as f64 / 32768.0)
                .collect()
        })
        .collect())
}

/// Caches the Hann window, FFT plan, filterbank, and DCT matrix for a config.
#[derive(Clone)]
pub struct MfccExtractor {
    config: DspConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: Vec<Vec<f64>>,
    /// (first_bin, weights) per filter; triangles are narrow, so skipping
    /// the zero bins cuts most of the per-frame work.
    sparse_filters: Vec<(usize, Vec<f64>)>,
    dct: Vec<Vec<f64>>,
}

impl MfccExtractor {
    pub fn new(config: DspConfig) -> Result<Self, DspError> {
        config.validate()?;
        let filterbank = mel_filterbank(&config)?;
        let dct = dct_matrix(config.num_cepstra, config.num_mel_filters);
        let n = config.frame_length as f64;
        // periodic Hann
        let window = (0..config.frame_length)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos()))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        let sparse_filters = filterbank
            .iter()
            .map(|row| {
                let first = row.iter().position(|&w| w != 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w != 0.0).unwrap_or(0);
                (first, row[first..=last].to_vec())
            })
            .collect();
        Ok(Self {
            config,
            window,
            fft,
            filterbank,
            sparse_filters,
            dct,
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.filterbank
    }

    /// One-sided magnitude-squared spectrum of a windowed, zero-padded frame.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.config.frame_length, "frame length mismatch");
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex::new(x * w, 0.0))
            .collect();
        buf.resize(self.config.fft_size, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf[..self.config.fft_size / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect()
    }

    /// Full MFCC pipeline for a canonical clip.
    pub fn mfcc(&self, clip: &AudioClip) -> Result<FeatureMatrix, DspError> {
        let frames = frame_signal(&clip.samples, &self.config)?;
        let values = frames
            .iter()
            .map(|frame| {
                let spectrum = self.power_spectrum(frame);
                let log_energies: Vec<f64> = self
                    .sparse_filters
                    .iter()
                    .map(|(first, weights)| {
                        let e: f64 = weights
                            .iter()
                            .zip(&spectrum[*first..])
                            .map(|(w, p)| w * p)
                            .sum();
                        (e + self.config.log_floor).ln()
                    })
                    .collect();
                self.dct
                    .iter()
                    .map(|row| row.iter().zip(&log_energies).map(|(d, e)| d * e).sum())
                    .collect()
            })
            .collect();
        Ok(FeatureMatrix {
            values,
            num_cepstra: self.config.num_cepstra,
        })
    }
}

/// Convenience wrapper building a fresh extractor; hot paths should hold an
/// [`MfccExtractor`] instead.
pub fn mfcc(clip: &AudioClip, config: &DspConfig) -> Result<FeatureMatrix, DspError> {
    MfccExtractor::new(config.clone())?.mfcc(clip)
}
