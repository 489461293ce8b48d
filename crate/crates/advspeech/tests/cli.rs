//! End-to-end CLI tests driving `cli::run` in-process: exit codes, emitted
//! files, and determinism of the train/attack/inspect subcommands.

use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;

use tempfile::TempDir;

use advspeech::cli::{self, EXIT_ATTACK_FAILED, EXIT_OK, EXIT_USAGE};
use advspeech::corpus::{synthetic_corpus, write_corpus_dir};
use advspeech::victim::load_model;

struct Fx {
    _dir: TempDir,
    model: PathBuf,
    corpus_dir: PathBuf,
    clip: PathBuf,
}

static FX: OnceLock<Fx> = OnceLock::new();

/// Trains a small 2-label model once and materializes its corpus on disk.
fn fx() -> &'static Fx {
    FX.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus_dir = dir.path().join("corpus");
        write_corpus_dir(&synthetic_corpus(2, 10, 1234), &corpus_dir).unwrap();
        let model = dir.path().join("model.bin");
        let status = cli::run([
            "advspeech",
            "train",
            "--synthetic",
            "--labels",
            "2",
            "--gen-clips-per-label",
            "10",
            "--model-out",
            model.to_str().unwrap(),
            "--seed",
            "5",
        ]);
        assert_eq!(status, EXIT_OK);
        let clip = corpus_dir.join("one").join("one_000.wav");
        assert!(clip.exists());
        Fx {
            _dir: dir,
            model,
            corpus_dir,
            clip,
        }
    })
}

#[test]
fn bad_arguments_exit_with_usage() {
    assert_eq!(cli::run(["advspeech"]), EXIT_USAGE);
    assert_eq!(cli::run(["advspeech", "no-such-subcommand"]), EXIT_USAGE);
    assert_eq!(cli::run(["advspeech", "train", "--synthetic"]), EXIT_USAGE);
}

#[test]
fn classify_names_the_training_label() {
    let fx = fx();
    let status = cli::run([
        "advspeech",
        "classify",
        "--model",
        fx.model.to_str().unwrap(),
        fx.clip.to_str().unwrap(),
    ]);
    assert_eq!(status, EXIT_OK);
}

#[test]
fn classify_missing_model_is_usage_error() {
    let fx = fx();
    let status = cli::run([
        "advspeech",
        "classify",
        "--model",
        "/nonexistent/model.bin",
        fx.clip.to_str().unwrap(),
    ]);
    assert_eq!(status, EXIT_USAGE);
}

#[test]
fn mfcc_dump_writes_one_row_per_frame() {
    let fx = fx();
    let out = fx._dir.path().join("feats.csv");
    let status = cli::run([
        "advspeech",
        "mfcc-dump",
        fx.clip.to_str().unwrap(),
        out.to_str().unwrap(),
    ]);
    assert_eq!(status, EXIT_OK);
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 98, "one second at 480/160 framing gives 98 frames");
    assert_eq!(rows[0].split(',').count(), 10);
}

#[test]
fn attack_rejects_target_equal_to_current_class() {
    let fx = fx();
    let status = cli::run([
        "advspeech",
        "attack",
        "--model",
        fx.model.to_str().unwrap(),
        "--input",
        fx.clip.to_str().unwrap(),
        "--target",
        "one",
        "--seed",
        "3",
    ]);
    assert_eq!(status, EXIT_USAGE);
}

#[test]
fn attack_rejects_unknown_label() {
    let fx = fx();
    let status = cli::run([
        "advspeech",
        "attack",
        "--model",
        fx.model.to_str().unwrap(),
        "--input",
        fx.clip.to_str().unwrap(),
        "--target",
        "zebra",
        "--seed",
        "3",
    ]);
    assert_eq!(status, EXIT_USAGE);
}

#[test]
fn hamstrung_attack_reports_failure_exit_code() {
    let fx = fx();
    // one generation with a near-zero perturbation budget cannot flip the label
    let status = cli::run([
        "advspeech",
        "attack",
        "--model",
        fx.model.to_str().unwrap(),
        "--input",
        fx.clip.to_str().unwrap(),
        "--untargeted",
        "--max-iter",
        "1",
        "--mutation-span",
        "1",
        "--perturb-fraction",
        "0.0001",
        "--mutation-prob",
        "0.000001",
        "--seed",
        "3",
    ]);
    assert_eq!(status, EXIT_ATTACK_FAILED);
}

#[test]
fn untargeted_attack_writes_adversarial_wav() {
    let fx = fx();
    let out = fx._dir.path().join("adv.wav");
    let status = cli::run([
        "advspeech",
        "attack",
        "--model",
        fx.model.to_str().unwrap(),
        "--input",
        fx.clip.to_str().unwrap(),
        "--untargeted",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert_eq!(status, EXIT_OK);
    assert!(out.exists());
    // the written clip must classify off its source label
    let model = load_model(&fx.model).unwrap();
    let adv = advspeech::audio_io::read_wav(&out).unwrap();
    let pred = model.predict(&adv).unwrap().argmax();
    assert_ne!(model.label_set().name(pred), "one");
}

#[test]
fn training_from_corpus_dir_matches_synthetic_training() {
    let fx = fx();
    let m2 = fx._dir.path().join("model_dir.bin");
    let status = cli::run([
        "advspeech",
        "train",
        "--corpus-dir",
        fx.corpus_dir.to_str().unwrap(),
        "--model-out",
        m2.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert_eq!(status, EXIT_OK);
    // the directory round-trips the synthetic corpus bit-exactly, so the
    // trained weights are identical too
    assert_eq!(fs::read(&fx.model).unwrap(), fs::read(&m2).unwrap());
}

#[test]
fn training_is_deterministic_across_runs() {
    let fx = fx();
    let m2 = fx._dir.path().join("model_again.bin");
    let status = cli::run([
        "advspeech",
        "train",
        "--synthetic",
        "--labels",
        "2",
        "--gen-clips-per-label",
        "10",
        "--model-out",
        m2.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert_eq!(status, EXIT_OK);
    assert_eq!(fs::read(&fx.model).unwrap(), fs::read(&m2).unwrap());
}
