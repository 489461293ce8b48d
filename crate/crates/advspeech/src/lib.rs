//! Black-box adversarial attacks on a keyword-spotting classifier.
//!
//! The pieces, bottom to top:
//! - [`audio_io`]: bit-exact PCM16 mono WAV reading/writing.
//! - [`dsp`]: deterministic MFCC front-end (the non-differentiable stage
//!   that rules out gradient attacks).
//! - [`victim`]: a small trainable CNN playing the black-box oracle,
//!   with persistence and query accounting.
//! - [`oracle`]: the probability-vector interface the attacker is limited to.
//! - [`attack`]: genetic search for adversarial perturbations confined to
//!   the 8 least-significant bits of a subset of samples.
//! - [`eval`]: source/target success matrices, noise audits, CSV export.
//! - [`corpus`]: labeled WAV directories and a built-in synthetic corpus.
//! - [`cli`]: the `advspeech` binary entry point.

pub mod attack;
pub mod audio_io;
pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod eval;
pub mod oracle;
pub mod seeds;
pub mod victim;
