//! The `advspeech` command line: train, attack, evaluate, classify,
//! mfcc-dump.
//!
//! Exit codes are a stable contract: 0 success, 1 usage/config error,
//! 2 attack failed within the iteration budget.
//!
//! Flag resolution order is flag > config file (`key=value` lines, keys
//! named like the long flags) > built-in default. The model path falls back
//! to the `ADVSPEECH_MODEL` environment variable. Omitting `--seed` picks a
//! random seed and prints it so any run can be reproduced after the fact.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::RngCore;

use crate::attack::{self, AttackConfig};
use crate::audio_io::{self, CANONICAL_SAMPLES};
use crate::corpus;
use crate::dsp::{DspConfig, MfccExtractor};
use crate::eval;
use crate::victim::{self, LabeledClip, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ATTACK_FAILED: i32 = 2;

const MODEL_ENV: &str = "ADVSPEECH_MODEL";

#[derive(Parser)]
#[command(
    name = "advspeech",
    about = "Black-box adversarial audio attacks on a keyword-spotting classifier"
)]
struct Cli {
    /// Optional key=value config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master RNG seed; a random seed is chosen and printed when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CorpusFlags {
    /// Corpus directory laid out as <label>/<clip>.wav.
    #[arg(long)]
    corpus_dir: Option<PathBuf>,
    /// Use the built-in synthetic tone corpus instead of a directory.
    #[arg(long)]
    synthetic: bool,
    /// Synthetic corpus: number of labels [default: 4].
    #[arg(long)]
    labels: Option<usize>,
    /// Synthetic corpus: clips generated per label [default: 50].
    #[arg(long)]
    gen_clips_per_label: Option<usize>,
    /// Synthetic corpus seed, independent of --seed so train and evaluate
    /// see the same clips [default: 1234].
    #[arg(long)]
    corpus_seed: Option<u64>,
}

#[derive(Args)]
struct AttackFlags {
    /// GA population size [default: 20].
    #[arg(long)]
    population_size: Option<usize>,
    /// Iteration cap before declaring failure [default: 500].
    #[arg(long)]
    max_iter: Option<usize>,
    /// Softmax selection temperature [default: 0.01].
    #[arg(long)]
    temperature: Option<f64>,
    /// Per-sample mutation probability [default: 0.005].
    #[arg(long)]
    mutation_prob: Option<f64>,
    /// Max |delta| per mutated sample, 0..=255 [default: 255].
    #[arg(long)]
    mutation_span: Option<i32>,
    /// Fraction of samples perturbed at initialization [default: 0.1].
    #[arg(long)]
    perturb_fraction: Option<f64>,
    /// Members carried over unchanged each generation [default: 2].
    #[arg(long)]
    elite_count: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the victim model and write a model file.
    Train {
        #[command(flatten)]
        corpus: CorpusFlags,
        /// Output model file.
        #[arg(long)]
        model_out: PathBuf,
        /// Fraction of each label held out for accuracy reporting
        /// [default: 0].
        #[arg(long)]
        holdout_frac: Option<f64>,
        /// Training epochs [default: 15].
        #[arg(long)]
        epochs: Option<usize>,
        /// SGD learning rate [default: 0.05].
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Mini-batch size [default: 16].
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Run one attack against a clip.
    Attack {
        /// Model file; falls back to $ADVSPEECH_MODEL.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Input WAV.
        #[arg(long)]
        input: PathBuf,
        /// Target label for a targeted attack.
        #[arg(long, conflicts_with = "untargeted")]
        target: Option<String>,
        /// Untargeted mode: push the clip off its current label.
        #[arg(long)]
        untargeted: bool,
        /// Adversarial WAV output path, written on success.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: AttackFlags,
    },
    /// Run the full source/target evaluation protocol.
    Evaluate {
        /// Model file; falls back to $ADVSPEECH_MODEL.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusFlags,
        /// Correctly classified clips attacked per label [default: 5].
        #[arg(long)]
        clips_per_label: Option<usize>,
        /// Output directory for WAVs, matrix.csv, attacks.csv, summary.txt.
        #[arg(long)]
        out_dir: PathBuf,
        /// Untargeted suite instead of the targeted matrix.
        #[arg(long)]
        untargeted: bool,
        /// Untargeted suite: number of clips to attack [default: 20].
        #[arg(long)]
        num_clips: Option<usize>,
        /// Parallel attack workers [default: 1].
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        flags: AttackFlags,
    },
    /// Print the model's label probabilities for a clip.
    Classify {
        /// Model file; falls back to $ADVSPEECH_MODEL.
        #[arg(long)]
        model: Option<PathBuf>,
        wav: PathBuf,
    },
    /// Write a clip's MFCC feature matrix as CSV, one row per frame.
    MfccDump { wav: PathBuf, csv_out: PathBuf },
}

type CfgMap = HashMap<String, String>;

fn load_config_file(path: &Path) -> Result<CfgMap, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), i + 1))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

fn resolve<T: FromStr + Copy>(
    flag: Option<T>,
    cfg: &CfgMap,
    key: &str,
    default: T,
) -> Result<T, String> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match cfg.get(key) {
        Some(s) => s
            .parse()
            .map_err(|_| format!("config key {key}: cannot parse {s:?}")),
        None => Ok(default),
    }
}

fn resolve_model_path(flag: Option<PathBuf>, cfg: &CfgMap) -> Result<PathBuf, String> {
    if let Some(p) = flag {
        return Ok(p);
    }
    if let Some(p) = cfg.get("model") {
        return Ok(PathBuf::from(p));
    }
    std::env::var(MODEL_ENV)
        .map(PathBuf::from)
        .map_err(|_| format!("no --model flag and ${MODEL_ENV} is unset"))
}

fn attack_config(flags: &AttackFlags, cfg: &CfgMap, seed: u64) -> Result<AttackConfig, String> {
    let d = AttackConfig::default();
    let config = AttackConfig {
        population_size: resolve(flags.population_size, cfg, "population_size", d.population_size)?,
        max_iter: resolve(flags.max_iter, cfg, "max_iter", d.max_iter)?,
        temperature: resolve(flags.temperature, cfg, "temperature", d.temperature)?,
        mutation_prob: resolve(flags.mutation_prob, cfg, "mutation_prob", d.mutation_prob)?,
        mutation_span: resolve(flags.mutation_span, cfg, "mutation_span", d.mutation_span)?,
        perturb_fraction: resolve(flags.perturb_fraction, cfg, "perturb_fraction", d.perturb_fraction)?,
        elite_count: resolve(flags.elite_count, cfg, "elite_count", d.elite_count)?,
        seed,
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn load_corpus(flags: &CorpusFlags, cfg: &CfgMap) -> Result<Vec<LabeledClip>, String> {
    if let Some(dir) = &flags.corpus_dir {
        if !dir.is_dir() {
            return Err(format!("corpus directory {} does not exist", dir.display()));
        }
        return corpus::load_corpus_dir(dir).map_err(|e| e.to_string());
    }
    if flags.synthetic || cfg.contains_key("synthetic") {
        let labels = resolve(flags.labels, cfg, "labels", 4)?;
        let per = resolve(flags.gen_clips_per_label, cfg, "gen_clips_per_label", 50)?;
        let seed = resolve(flags.corpus_seed, cfg, "corpus_seed", 1234)?;
        return Ok(corpus::synthetic_corpus(labels, per, seed));
    }
    Err("provide --corpus-dir or --synthetic".into())
}

fn read_canonical_wav(path: &Path) -> Result<audio_io::AudioClip, String> {
    let clip = audio_io::read_wav(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(audio_io::pad_or_trim(&clip, CANONICAL_SAMPLES))
}

/// Runs the CLI; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match &cli.config {
        Some(path) => match load_config_file(path) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        },
        None => HashMap::new(),
    };
    let seed = cli.seed.unwrap_or_else(|| {
        let s = rand::thread_rng().next_u64();
        println!("seed: {s}");
        s
    });
    match dispatch(cli.command, &cfg, seed) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(command: Command, cfg: &CfgMap, seed: u64) -> Result<i32, String> {
    match command {
        Command::Train {
            corpus: cflags,
            model_out,
            holdout_frac,
            epochs,
            learning_rate,
            batch_size,
        } => {
            let d = TrainConfig::default();
            let hyper = TrainConfig {
                epochs: resolve(epochs, cfg, "epochs", d.epochs)?,
                learning_rate: resolve(learning_rate, cfg, "learning_rate", d.learning_rate)?,
                batch_size: resolve(batch_size, cfg, "batch_size", d.batch_size)?,
                seed,
            };
            let holdout_frac = resolve(holdout_frac, cfg, "holdout_frac", 0.0)?;
            let all = load_corpus(&cflags, cfg)?;
            let (train_set, holdout) = split_holdout(&all, holdout_frac);
            let model = victim::train(&train_set, &DspConfig::default(), &hyper)
                .map_err(|e| e.to_string())?;
            let train_acc =
                victim::accuracy(&model, &train_set).map_err(|e| e.to_string())?;
            println!("train_accuracy: {train_acc:.4}");
            if !holdout.is_empty() {
                let acc = victim::accuracy(&model, &holdout).map_err(|e| e.to_string())?;
                println!("holdout_accuracy: {acc:.4}");
            }
            victim::save_model(&model, &model_out).map_err(|e| e.to_string())?;
            println!("model written to {}", model_out.display());
            Ok(EXIT_OK)
        }
        Command::Attack {
            model,
            input,
            target,
            untargeted,
            out,
            flags,
        } => {
            let model_path = resolve_model_path(model, cfg)?;
            let model = victim::load_model(&model_path).map_err(|e| e.to_string())?;
            let clip = read_canonical_wav(&input)?;
            let config = attack_config(&flags, cfg, seed)?;
            let initial = model.predict(&clip).map_err(|e| e.to_string())?;
            let source = initial.argmax();
            let result = if untargeted {
                attack::run_untargeted_attack(&clip, source, &model, &config)
            } else {
                let name = target.ok_or("provide --target LABEL or --untargeted")?;
                let idx = model
                    .label_set()
                    .index_of(&name)
                    .ok_or_else(|| format!("unknown label {name:?}"))?;
                attack::run_targeted_attack(&clip, idx, &model, &config)
            }
            .map_err(|e| e.to_string())?;
            println!("success: {}", result.success);
            println!("source: {}", model.label_set().name(result.source_label));
            println!("target: {}", model.label_set().name(result.target_label));
            println!("iterations: {}", result.iterations_used);
            println!("queries: {}", result.queries_used);
            println!("changed_samples: {}", result.noise.changed_sample_count);
            println!("max_abs_delta: {}", result.noise.max_abs_delta);
            println!("rms_delta: {:.3}", result.noise.rms_delta);
            println!("snr_db: {:.2}", result.noise.snr_db);
            if result.success {
                if let Some(out) = out {
                    audio_io::write_wav(&result.adversarial, &out).map_err(|e| e.to_string())?;
                    println!("adversarial clip written to {}", out.display());
                }
                Ok(EXIT_OK)
            } else {
                Ok(EXIT_ATTACK_FAILED)
            }
        }
        Command::Evaluate {
            model,
            corpus: cflags,
            clips_per_label,
            out_dir,
            untargeted,
            num_clips,
            jobs,
            flags,
        } => {
            let model_path = resolve_model_path(model, cfg)?;
            let model = victim::load_model(&model_path).map_err(|e| e.to_string())?;
            let corpus = load_corpus(&cflags, cfg)?;
            let config = attack_config(&flags, cfg, seed)?;
            let clips_per_label = resolve(clips_per_label, cfg, "clips_per_label", 5)?;
            let num_clips = resolve(num_clips, cfg, "num_clips", 20)?;
            let jobs = resolve(jobs, cfg, "jobs", 1)?;
            fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
            let outcome = if untargeted {
                eval::run_untargeted_suite(&corpus, &model, &config, num_clips, Some(&out_dir), jobs)
            } else {
                eval::build_attack_matrix(
                    &corpus,
                    &model,
                    &config,
                    clips_per_label,
                    Some(&out_dir),
                    jobs,
                )
            }
            .map_err(|e| e.to_string())?;
            for id in &outcome.skipped {
                eprintln!("skipped misclassified clip {id}");
            }
            if !untargeted {
                eval::export_matrix_csv(&outcome.matrix, out_dir.join("matrix.csv"))
                    .map_err(|e| e.to_string())?;
            }
            eval::export_attacks_csv(&outcome.records, out_dir.join("attacks.csv"))
                .map_err(|e| e.to_string())?;
            let summary = eval::summarize(&outcome.records).map_err(|e| e.to_string())?;
            fs::write(out_dir.join("summary.txt"), summary.to_string())
                .map_err(|e| e.to_string())?;
            print!("{summary}");
            Ok(EXIT_OK)
        }
        Command::Classify { model, wav } => {
            let model_path = resolve_model_path(model, cfg)?;
            let model = victim::load_model(&model_path).map_err(|e| e.to_string())?;
            let clip = read_canonical_wav(&wav)?;
            let probs = model.predict(&clip).map_err(|e| e.to_string())?;
            let top = probs.argmax();
            println!("label: {}", model.label_set().name(top));
            for (i, p) in probs.0.iter().enumerate() {
                println!("{}: {:.6}", model.label_set().name(i), p);
            }
            Ok(EXIT_OK)
        }
        Command::MfccDump { wav, csv_out } => {
            let clip = read_canonical_wav(&wav)?;
            let extractor =
                MfccExtractor::new(DspConfig::default()).map_err(|e| e.to_string())?;
            let feats = extractor.mfcc(&clip).map_err(|e| e.to_string())?;
            let mut out = String::new();
            for row in &feats.values {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            fs::write(&csv_out, out).map_err(|e| e.to_string())?;
            println!("{} frames written to {}", feats.num_frames(), csv_out.display());
            Ok(EXIT_OK)
        }
    }
}

/// Splits the last `ceil(frac * n)` clips of each label into a holdout set.
/// The corpus order is stable, so the split is deterministic.
fn split_holdout(all: &[LabeledClip], frac: f64) -> (Vec<LabeledClip>, Vec<LabeledClip>) {
    if frac <= 0.0 {
        return (all.to_vec(), Vec::new());
    }
    let mut labels: Vec<String> = all.iter().map(|c| c.label.clone()).collect();
    labels.sort();
    labels.dedup();
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for label in &labels {
        let clips: Vec<&LabeledClip> = all.iter().filter(|c| &c.label == label).collect();
        let h = ((clips.len() as f64 * frac).ceil() as usize).min(clips.len());
        let split = clips.len() - h;
        for (i, c) in clips.iter().enumerate() {
            if i < split {
                train.push((*c).clone());
            } else {
                holdout.push((*c).clone());
            }
        }
    }
    (train, holdout)
}
