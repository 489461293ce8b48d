//! Evaluation protocol: source/target success matrix, noise audits, CSV
//! export, and aggregate summaries.
//!
//! Per-attack seeds derive from the master seed plus (source, target, clip
//! id), so results are identical however the attacks are scheduled across
//! worker threads. Wall time is recorded in memory and reported in the
//! summary but deliberately kept out of `attacks.csv` so reruns are
//! byte-identical.

use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::attack::{self, AttackConfig, AttackError};
use crate::audio_io::{self, AudioClip};
use crate::seeds;
use crate::victim::{LabeledClip, VictimError, VictimModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("insufficient corpus: {0}")]
    InsufficientCorpus(String),
    #[error("length mismatch: original {original} vs adversarial {adversarial}")]
    LengthMismatch { original: usize, adversarial: usize },
    #[error("no records to summarize")]
    EmptyRecords,
    #[error("csv parse error: {0}")]
    CsvParse(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

/// Integer-delta noise statistics between an original and its adversarial
/// counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    pub changed_sample_count: usize,
    pub changed_fraction: f64,
    /// Bounded by 255 whenever the LSB constraint held.
    pub max_abs_delta: i32,
    pub rms_delta: f64,
    /// `10 log10(signal_power / noise_power)`; +inf when the delta is zero.
    pub snr_db: f64,
}

/// Computes [`NoiseReport`] fields on the integer sample deltas.
pub fn noise_metrics(
    original: &AudioClip,
    adversarial: &AudioClip,
) -> Result<NoiseReport, EvalError> {
    if original.len() != adversarial.len() {
        return Err(EvalError::LengthMismatch {
            original: original.len(),
            adversarial: adversarial.len(),
        });
    }
    let n = original.len() as f64;
    let mut changed = 0usize;
    let mut max_abs = 0i32;
    let mut noise_power = 0.0f64;
    let mut signal_power = 0.0f64;
    for (&o, &a) in original.samples.iter().zip(&adversarial.samples) {
        let d = a as i32 - o as i32;
        if d != 0 {
            changed += 1;
        }
        max_abs = max_abs.max(d.abs());
        noise_power += (d as f64) * (d as f64);
        signal_power += (o as f64) * (o as f64);
    }
    let snr_db = if noise_power == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal_power / noise_power).log10()
    };
    Ok(NoiseReport {
        changed_sample_count: changed,
        changed_fraction: changed as f64 / n,
        max_abs_delta: max_abs,
        rms_delta: (noise_power / n).sqrt(),
        snr_db,
    })
}

/// One attack attempt as recorded by the harness.
#[derive(Debug, Clone)]
pub struct AttackRecord {
    pub source: String,
    pub target: String,
    pub clip_id: String,
    pub success: bool,
    pub iterations: usize,
    pub queries: u64,
    pub noise: NoiseReport,
    /// File name inside the output directory; empty when no WAV was written.
    pub wav_path: String,
    /// Seconds; in-memory only, never serialized.
    pub wall_time_s: f64,
}

/// Sentinel for matrix cells that carry no data (the diagonal, or pairs
/// with zero attempts).
pub const MATRIX_SENTINEL: f64 = -1.0;

/// Aggregated source x target results.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackMatrix {
    pub labels: Vec<String>,
    pub attempts: Vec<Vec<u64>>,
    pub successes: Vec<Vec<u64>>,
    /// successes / attempts; [`MATRIX_SENTINEL`] on the diagonal.
    pub success_rate: Vec<Vec<f64>>,
    pub mean_iterations: Vec<Vec<f64>>,
}

impl AttackMatrix {
    fn from_records(labels: Vec<String>, records: &[AttackRecord]) -> Self {
        let k = labels.len();
        let mut attempts = vec![vec![0u64; k]; k];
        let mut successes = vec![vec![0u64; k]; k];
        let mut iter_sum = vec![vec![0u64; k]; k];
        let index = |name: &str| labels.iter().position(|l| l == name).unwrap();
        for r in records {
            let (s, t) = (index(&r.source), index(&r.target));
            attempts[s][t] += 1;
            iter_sum[s][t] += r.iterations as u64;
            if r.success {
                successes[s][t] += 1;
            }
        }
        let mut success_rate = vec![vec![MATRIX_SENTINEL; k]; k];
        let mut mean_iterations = vec![vec![MATRIX_SENTINEL; k]; k];
        for s in 0..k {
            for t in 0..k {
                if s != t && attempts[s][t] > 0 {
                    success_rate[s][t] = successes[s][t] as f64 / attempts[s][t] as f64;
                    mean_iterations[s][t] = iter_sum[s][t] as f64 / attempts[s][t] as f64;
                }
            }
        }
        Self {
            labels,
            attempts,
            successes,
            success_rate,
            mean_iterations,
        }
    }

    /// Total successes over total attempts, diagonal excluded.
    pub fn overall_success_rate(&self) -> f64 {
        let k = self.labels.len();
        let mut att = 0u64;
        let mut suc = 0u64;
        for s in 0..k {
            for t in 0..k {
                if s != t {
                    att += self.attempts[s][t];
                    suc += self.successes[s][t];
                }
            }
        }
        if att == 0 {
            return MATRIX_SENTINEL;
        }
        suc as f64 / att as f64
    }
}

/// Number of attacks the targeted protocol performs.
pub fn expected_attack_count(num_labels: usize, clips_per_label: usize) -> usize {
    num_labels * clips_per_label * (num_labels - 1)
}

/// Everything one evaluation run produces.
#[derive(Debug)]
pub struct EvalOutcome {
    pub matrix: AttackMatrix,
    pub records: Vec<AttackRecord>,
    /// Clip ids skipped because the model misclassified them.
    pub skipped: Vec<String>,
}

/// Picks `per_label` correctly classified clips per label, logging skips.
/// Misclassified clips are replaced by later clips of the same label until
/// the corpus is exhausted.
fn select_clips<'a>(
    corpus: &'a [LabeledClip],
    model: &VictimModel,
    per_label: usize,
) -> Result<(Vec<&'a LabeledClip>, Vec<String>), EvalError> {
    let mut selected = Vec::new();
    let mut skipped = Vec::new();
    for label in model.label_set().labels() {
        let truth = model.label_set().index_of(label).unwrap();
        let mut picked = 0usize;
        for c in corpus.iter().filter(|c| &c.label == label) {
            if picked == per_label {
                break;
            }
            if model.predict(&c.clip)?.argmax() == truth {
                selected.push(c);
                picked += 1;
            } else {
                skipped.push(c.id.clone());
            }
        }
        if picked < per_label {
            return Err(EvalError::InsufficientCorpus(format!(
                "label {label:?}: only {picked} correctly classified clips, need {per_label}"
            )));
        }
    }
    Ok((selected, skipped))
}

fn run_jobs<F>(jobs: usize, tasks: Vec<F>) -> Result<Vec<AttackRecord>, EvalError>
where
    F: Fn() -> Result<AttackRecord, EvalError> + Send + Sync,
{
    if jobs <= 1 {
        tasks.iter().map(|t| t()).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| EvalError::InsufficientCorpus(e.to_string()))?;
        pool.install(|| tasks.par_iter().map(|t| t()).collect())
    }
}

/// Runs `run_targeted_attack` for every selected clip and every non-source
/// target, writing one adversarial WAV per attempt when `out_dir` is given.
pub fn build_attack_matrix(
    corpus: &[LabeledClip],
    model: &VictimModel,
    config: &AttackConfig,
    clips_per_label: usize,
    out_dir: Option<&Path>,
    jobs: usize,
) -> Result<EvalOutcome, EvalError> {
    let labels: Vec<String> = model.label_set().labels().to_vec();
    let (selected, skipped) = select_clips(corpus, model, clips_per_label)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    let mut tasks: Vec<Box<dyn Fn() -> Result<AttackRecord, EvalError> + Send + Sync>> =
        Vec::new();
    for clip in &selected {
        let source_idx = model.label_set().index_of(&clip.label).unwrap();
        for target_idx in 0..labels.len() {
            if target_idx == source_idx {
                continue;
            }
            let clip = (*clip).clone();
            let labels = labels.clone();
            let out_dir = out_dir.map(|p| p.to_path_buf());
            let seed = seeds::derive_seed(
                config.seed,
                &[
                    source_idx as u64,
                    target_idx as u64,
                    seeds::hash_str(&clip.id),
                ],
            );
            let attack_config = AttackConfig {
                seed,
                ..config.clone()
            };
            tasks.push(Box::new(move || {
                let start = Instant::now();
                let result =
                    attack::run_targeted_attack(&clip.clip, target_idx, model, &attack_config)?;
                let wall = start.elapsed().as_secs_f64();
                let name = format!(
                    "{}_{}_{}.wav",
                    labels[source_idx], labels[target_idx], clip.id
                );
                if let Some(dir) = &out_dir {
                    audio_io::write_wav(&result.adversarial, dir.join(&name))
                        .map_err(|e| EvalError::CsvParse(e.to_string()))?;
                }
                Ok(AttackRecord {
                    source: labels[source_idx].clone(),
                    target: labels[target_idx].clone(),
                    clip_id: clip.id.clone(),
                    success: result.success,
                    iterations: result.iterations_used,
                    queries: result.queries_used,
                    noise: result.noise,
                    wav_path: if out_dir.is_some() { name } else { String::new() },
                    wall_time_s: wall,
                })
            }));
        }
    }
    let records = run_jobs(jobs, tasks)?;
    Ok(EvalOutcome {
        matrix: AttackMatrix::from_records(labels, &records),
        records,
        skipped,
    })
}

/// Untargeted counterpart: one attack per selected clip, `num_clips` total,
/// drawn round-robin across labels in corpus order.
pub fn run_untargeted_suite(
    corpus: &[LabeledClip],
    model: &VictimModel,
    config: &AttackConfig,
    num_clips: usize,
    out_dir: Option<&Path>,
    jobs: usize,
) -> Result<EvalOutcome, EvalError> {
    let labels: Vec<String> = model.label_set().labels().to_vec();
    let mut selected = Vec::new();
    let mut skipped = Vec::new();
    for c in corpus {
        if selected.len() == num_clips {
            break;
        }
        let truth = model
            .label_set()
            .index_of(&c.label)
            .ok_or_else(|| VictimError::UnknownLabel(c.label.clone()))?;
        if model.predict(&c.clip)?.argmax() == truth {
            selected.push(c);
        } else {
            skipped.push(c.id.clone());
        }
    }
    if selected.len() < num_clips {
        return Err(EvalError::InsufficientCorpus(format!(
            "only {} correctly classified clips, need {num_clips}",
            selected.len()
        )));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut tasks: Vec<Box<dyn Fn() -> Result<AttackRecord, EvalError> + Send + Sync>> =
        Vec::new();
    for clip in &selected {
        let source_idx = model.label_set().index_of(&clip.label).unwrap();
        let clip = (*clip).clone();
        let labels = labels.clone();
        let out_dir = out_dir.map(|p| p.to_path_buf());
        let seed = seeds::derive_seed(
            config.seed,
            &[source_idx as u64, u64::MAX, seeds::hash_str(&clip.id)],
        );
        let attack_config = AttackConfig {
            seed,
            ..config.clone()
        };
        tasks.push(Box::new(move || {
            let start = Instant::now();
            let result =
                attack::run_untargeted_attack(&clip.clip, source_idx, model, &attack_config)?;
            let wall = start.elapsed().as_secs_f64();
            let name = format!("{}_any_{}.wav", labels[source_idx], clip.id);
            if let Some(dir) = &out_dir {
                audio_io::write_wav(&result.adversarial, dir.join(&name))
                    .map_err(|e| EvalError::CsvParse(e.to_string()))?;
            }
            Ok(AttackRecord {
                source: labels[source_idx].clone(),
                target: labels[result.target_label].clone(),
                clip_id: clip.id.clone(),
                success: result.success,
                iterations: result.iterations_used,
                queries: result.queries_used,
                noise: result.noise,
                wav_path: if out_dir.is_some() { name } else { String::new() },
                wall_time_s: wall,
            })
        }));
    }
    let records = run_jobs(jobs, tasks)?;
    Ok(EvalOutcome {
        matrix: AttackMatrix::from_records(labels, &records),
        records,
        skipped,
    })
}

// ---------------------------------------------------------------------------
// CSV schemas
// ---------------------------------------------------------------------------

const MATRIX_HEADER: &str = "source,target,attempts,successes,success_rate,mean_iterations";
const ATTACKS_HEADER: &str = "source,target,clip_id,success,iterations,queries,\
changed_sample_count,changed_fraction,max_abs_delta,rms_delta,snr_db,wav_path";

/// Writes the full K x K matrix, one row per (source, target) pair.
pub fn export_matrix_csv(matrix: &AttackMatrix, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut out = String::from(MATRIX_HEADER);
    out.push('\n');
    let k = matrix.labels.len();
    for s in 0..k {
        for t in 0..k {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                matrix.labels[s],
                matrix.labels[t],
                matrix.attempts[s][t],
                matrix.successes[s][t],
                matrix.success_rate[s][t],
                matrix.mean_iterations[s][t],
            ));
        }
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Re-parses a matrix CSV; exact inverse of [`export_matrix_csv`].
pub fn import_matrix_csv(path: impl AsRef<Path>) -> Result<AttackMatrix, EvalError> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| EvalError::CsvParse("empty file".into()))?;
    if header != MATRIX_HEADER {
        return Err(EvalError::CsvParse(format!("unexpected header {header:?}")));
    }
    let mut labels: Vec<String> = Vec::new();
    let mut cells = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(EvalError::CsvParse(format!("bad row {line:?}")));
        }
        if !labels.contains(&f[0].to_string()) {
            labels.push(f[0].to_string());
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| EvalError::CsvParse(format!("{s:?}: {e}")))
        };
        let parse_u = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| EvalError::CsvParse(format!("{s:?}: {e}")))
        };
        cells.push((
            f[0].to_string(),
            f[1].to_string(),
            parse_u(f[2])?,
            parse_u(f[3])?,
            parse_f(f[4])?,
            parse_f(f[5])?,
        ));
    }
    let k = labels.len();
    if cells.len() != k * k {
        return Err(EvalError::CsvParse(format!(
            "{} rows for {k} labels, expected {}",
            cells.len(),
            k * k
        )));
    }
    let mut matrix = AttackMatrix {
        labels: labels.clone(),
        attempts: vec![vec![0; k]; k],
        successes: vec![vec![0; k]; k],
        success_rate: vec![vec![MATRIX_SENTINEL; k]; k],
        mean_iterations: vec![vec![MATRIX_SENTINEL; k]; k],
    };
    let index = |name: &str| labels.iter().position(|l| l == name);
    for (src, tgt, att, suc, rate, mit) in cells {
        let s = index(&src).ok_or_else(|| EvalError::CsvParse(format!("label {src:?}")))?;
        let t = index(&tgt).ok_or_else(|| EvalError::CsvParse(format!("label {tgt:?}")))?;
        matrix.attempts[s][t] = att;
        matrix.successes[s][t] = suc;
        matrix.success_rate[s][t] = rate;
        matrix.mean_iterations[s][t] = mit;
    }
    Ok(matrix)
}

/// Per-attack records with a stable column order; wall time is excluded so
/// identical seeds give byte-identical files.
pub fn export_attacks_csv(records: &[AttackRecord], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut out = String::from(ATTACKS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.source,
            r.target,
            r.clip_id,
            r.success,
            r.iterations,
            r.queries,
            r.noise.changed_sample_count,
            r.noise.changed_fraction,
            r.noise.max_abs_delta,
            r.noise.rms_delta,
            r.noise.snr_db,
            r.wav_path,
        ));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Parses an attacks CSV back into records (wall time reads as zero).
pub fn import_attacks_csv(path: impl AsRef<Path>) -> Result<Vec<AttackRecord>, EvalError> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| EvalError::CsvParse("empty file".into()))?;
    if header != ATTACKS_HEADER {
        return Err(EvalError::CsvParse(format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(EvalError::CsvParse(format!("bad row {line:?}")));
        }
        let err = |s: &str| EvalError::CsvParse(format!("bad field {s:?}"));
        records.push(AttackRecord {
            source: f[0].to_string(),
            target: f[1].to_string(),
            clip_id: f[2].to_string(),
            success: f[3].parse().map_err(|_| err(f[3]))?,
            iterations: f[4].parse().map_err(|_| err(f[4]))?,
            queries: f[5].parse().map_err(|_| err(f[5]))?,
            noise: NoiseReport {
                changed_sample_count: f[6].parse().map_err(|_| err(f[6]))?,
                changed_fraction: f[7].parse().map_err(|_| err(f[7]))?,
                max_abs_delta: f[8].parse().map_err(|_| err(f[8]))?,
                rms_delta: f[9].parse().map_err(|_| err(f[9]))?,
                snr_db: f[10].parse().map_err(|_| err(f[10]))?,
            },
            wav_path: f[11].to_string(),
            wall_time_s: 0.0,
        });
    }
    Ok(records)
}

/// Aggregate summary; medians use the lower-median convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub overall_success_rate: f64,
    pub median_iterations: usize,
    pub median_wall_time_s: f64,
    pub mean_snr_db: f64,
}

fn lower_median<T: Copy + PartialOrd>(values: &[T]) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[(v.len() - 1) / 2]
}

pub fn summarize(records: &[AttackRecord]) -> Result<Summary, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let successes = records.iter().filter(|r| r.success).count();
    let iters: Vec<usize> = records.iter().map(|r| r.iterations).collect();
    let walls: Vec<f64> = records.iter().map(|r| r.wall_time_s).collect();
    let snr_sum: f64 = records.iter().map(|r| r.noise.snr_db).sum();
    Ok(Summary {
        overall_success_rate: successes as f64 / records.len() as f64,
        median_iterations: lower_median(&iters),
        median_wall_time_s: lower_median(&walls),
        mean_snr_db: snr_sum / records.len() as f64,
    })
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "overall_success_rate: {:.4}", self.overall_success_rate)?;
        writeln!(f, "median_iterations: {}", self.median_iterations)?;
        writeln!(f, "median_wall_time_s: {:.3}", self.median_wall_time_s)?;
        writeln!(f, "mean_snr_db: {:.2}", self.mean_snr_db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(source: &str, target: &str, id: &str, success: bool, iters: usize) -> AttackRecord {
        AttackRecord {
            source: source.into(),
            target: target.into(),
            clip_id: id.into(),
            success,
            iterations: iters,
            queries: (iters * 20) as u64,
            noise: NoiseReport {
                changed_sample_count: 100,
                changed_fraction: 100.0 / 16000.0,
                max_abs_delta: 200,
                rms_delta: 12.5,
                snr_db: 18.25,
            },
            wav_path: format!("{source}_{target}_{id}.wav"),
            wall_time_s: 1.5,
        }
    }

    #[test]
    fn noise_metrics_zero_delta() {
        let clip = AudioClip::new(vec![100; 16000], 16000);
        let r = noise_metrics(&clip, &clip).unwrap();
        assert_eq!(r.changed_sample_count, 0);
        assert_eq!(r.max_abs_delta, 0);
        assert!(r.snr_db.is_infinite() && r.snr_db > 0.0);
    }

    #[test]
    fn noise_metrics_single_sample() {
        let orig = AudioClip::new(vec![0; 16000], 16000);
        let mut adv = orig.clone();
        adv.samples[7] = 255;
        let r = noise_metrics(&orig, &adv).unwrap();
        assert_eq!(r.changed_sample_count, 1);
        assert!((r.changed_fraction - 1.0 / 16000.0).abs() < 1e-15);
        assert_eq!(r.max_abs_delta, 255);
    }

    #[test]
    fn noise_metrics_constant_delta_closed_form() {
        // constant clip of value a with constant delta d: snr = 10 log10(a^2/d^2)
        let a = 1000.0f64;
        let d = 50.0f64;
        let orig = AudioClip::new(vec![a as i16; 1000], 16000);
        let adv = AudioClip::new(vec![(a + d) as i16; 1000], 16000);
        let r = noise_metrics(&orig, &adv).unwrap();
        let expected = 10.0 * (a * a / (d * d)).log10();
        assert!((r.snr_db - expected).abs() < 1e-9);
        assert!((r.rms_delta - d).abs() < 1e-12);
    }

    #[test]
    fn noise_metrics_length_mismatch() {
        let a = AudioClip::new(vec![0; 10], 16000);
        let b = AudioClip::new(vec![0; 11], 16000);
        assert!(matches!(
            noise_metrics(&a, &b),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn full_scale_attack_count() {
        assert_eq!(expected_attack_count(10, 50), 4500);
        assert_eq!(expected_attack_count(2, 1), 2);
    }

    #[test]
    fn matrix_csv_roundtrip() {
        let records = vec![
            record("one", "two", "a", true, 10),
            record("one", "two", "b", false, 500),
            record("two", "one", "c", true, 3),
        ];
        let matrix = AttackMatrix::from_records(vec!["one".into(), "two".into()], &records);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matrix.csv");
        export_matrix_csv(&matrix, &path).unwrap();
        let back = import_matrix_csv(&path).unwrap();
        assert_eq!(back, matrix);
        assert_eq!(matrix.success_rate[0][1], 0.5);
        assert_eq!(matrix.success_rate[0][0], MATRIX_SENTINEL);
        assert!((matrix.overall_success_rate() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn attacks_csv_roundtrip_and_aggregation_consistency() {
        let records = vec![
            record("one", "two", "a", true, 10),
            record("two", "one", "b", true, 20),
            record("one", "two", "c", false, 500),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attacks.csv");
        export_attacks_csv(&records, &path).unwrap();
        let back = import_attacks_csv(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.success, b.success);
            assert_eq!(a.noise, b.noise);
            assert_eq!(a.wav_path, b.wav_path);
        }
        // matrix aggregates equal recomputation from the per-attack file
        let matrix = AttackMatrix::from_records(vec!["one".into(), "two".into()], &records);
        let recomputed = AttackMatrix::from_records(vec!["one".into(), "two".into()], &back);
        assert_eq!(matrix.attempts, recomputed.attempts);
        assert_eq!(matrix.successes, recomputed.successes);
        assert_eq!(matrix.overall_success_rate(), recomputed.overall_success_rate());
    }

    #[test]
    fn infinite_snr_survives_csv() {
        let mut r = record("one", "two", "a", true, 1);
        r.noise.snr_db = f64::INFINITY;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attacks.csv");
        export_attacks_csv(&[r], &path).unwrap();
        let back = import_attacks_csv(&path).unwrap();
        assert!(back[0].noise.snr_db.is_infinite());
    }

    #[test]
    fn empty_records_exports_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attacks.csv");
        export_attacks_csv(&[], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{ATTACKS_HEADER}\n"));
        assert!(import_attacks_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn summarize_cases() {
        assert!(matches!(summarize(&[]), Err(EvalError::EmptyRecords)));

        let single = vec![record("one", "two", "a", true, 42)];
        let s = summarize(&single).unwrap();
        assert_eq!(s.overall_success_rate, 1.0);
        assert_eq!(s.median_iterations, 42);
        assert_eq!(s.median_wall_time_s, 1.5);

        let all = vec![
            record("one", "two", "a", true, 10),
            record("one", "two", "b", true, 30),
        ];
        let s = summarize(&all).unwrap();
        assert_eq!(s.overall_success_rate, 1.0);
        // lower median of [10, 30]
        assert_eq!(s.median_iterations, 10);
    }
}
