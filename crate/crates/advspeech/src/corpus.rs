//! Labeled clip corpora: `<label>/<clip>.wav` directories and a built-in
//! synthetic generator so nothing external is needed to train or evaluate.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio_io::{self, AudioClip, CANONICAL_SAMPLES};
use crate::seeds;
use crate::victim::{LabeledClip, VictimError};

/// Label vocabulary for synthetic corpora, in index order.
pub const SYNTH_LABELS: [&str; 10] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Loads a `<label>/<clip>.wav` corpus directory. Labels and files are
/// visited in sorted order so the corpus ordering is stable. Clips are
/// padded or trimmed to the canonical one-second length.
pub fn load_corpus_dir(dir: impl AsRef<Path>) -> Result<Vec<LabeledClip>, VictimError> {
    let dir = dir.as_ref();
    let mut labels: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            labels.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    labels.sort();
    if labels.is_empty() {
        return Err(VictimError::InsufficientData(format!(
            "no label subdirectories in {}",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for label in &labels {
        let mut files: Vec<_> = fs::read_dir(dir.join(label))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map_or(false, |e| e == "wav"))
            .collect();
        files.sort();
        for path in files {
            let clip = audio_io::read_wav(&path).map_err(|e| {
                VictimError::InsufficientData(format!("{}: {e}", path.display()))
            })?;
            let clip = audio_io::pad_or_trim(&clip, CANONICAL_SAMPLES);
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push(LabeledClip {
                label: label.clone(),
                id,
                clip,
            });
        }
    }
    Ok(out)
}

/// Writes a corpus as a `<label>/<id>.wav` directory tree.
pub fn write_corpus_dir(corpus: &[LabeledClip], dir: impl AsRef<Path>) -> Result<(), VictimError> {
    let dir = dir.as_ref();
    for c in corpus {
        let sub = dir.join(&c.label);
        fs::create_dir_all(&sub)?;
        audio_io::write_wav(&c.clip, sub.join(format!("{}.wav", c.id)))
            .map_err(|e| VictimError::InsufficientData(e.to_string()))?;
    }
    Ok(())
}

/// One synthetic clip: a jittered tone at the label's base frequency plus
/// uniform background noise. Per-clip seeds derive from (seed, label, index)
/// so any subset of the corpus is reproducible in isolation.
pub fn synthetic_clip(label_idx: usize, clip_idx: usize, seed: u64) -> AudioClip {
    let clip_seed = seeds::derive_seed(seed, &[label_idx as u64, clip_idx as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
    let base_freq = 400.0 + 120.0 * label_idx as f64;
    let freq = base_freq * rng.gen_range(0.98..1.02);
    let amp = rng.gen_range(70.0..120.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let samples: Vec<i16> = (0..CANONICAL_SAMPLES)
        .map(|i| {
            let t = i as f64 / 16000.0;
            let tone = amp * (std::f64::consts::TAU * freq * t + phase).sin();
            let noise = rng.gen_range(-40.0..40.0);
            (tone + noise).round().clamp(-32768.0, 32767.0) as i16
        })
        .collect();
    AudioClip::new(samples, 16000).with_label(SYNTH_LABELS[label_idx])
}

/// Deterministic synthetic corpus: `num_labels` tone classes with
/// `clips_per_label` clips each.
pub fn synthetic_corpus(num_labels: usize, clips_per_label: usize, seed: u64) -> Vec<LabeledClip> {
    assert!(
        num_labels >= 2 && num_labels <= SYNTH_LABELS.len(),
        "num_labels must be in 2..={}",
        SYNTH_LABELS.len()
    );
    let mut out = Vec::with_capacity(num_labels * clips_per_label);
    for (li, label) in SYNTH_LABELS.iter().take(num_labels).enumerate() {
        for ci in 0..clips_per_label {
            out.push(LabeledClip {
                label: (*label).to_string(),
                id: format!("{label}_{ci:03}"),
                clip: synthetic_clip(li, ci, seed),
            });
        }
    }
    out
}
