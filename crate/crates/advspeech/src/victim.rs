//! The keyword-spotting victim: a small CNN over MFCC features, with
//! training, persistence, and query accounting.
//!
//! Architecture is fixed: one 2-D convolution over (frames x cepstra), ReLU,
//! 2x2 max pooling, one hidden dense layer, a dense-K output and softmax.
//! Weights are stored as little-endian f32; all arithmetic runs in f64 so
//! persistence round-trips are prediction-exact.
//!
//! Softmax is computed with max-subtraction; together with f32 weight
//! storage and fixed summation order this makes prediction and training
//! bit-deterministic for a given seed.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::{fs, io};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio_io::{AudioClip, CANONICAL_SAMPLES};
use crate::dsp::{DspConfig, DspError, MfccExtractor};
use crate::oracle::{Oracle, ProbVector};

const MAGIC: &[u8; 8] = b"ADVSKWS1";
const FORMAT_VERSION: u32 = 1;

const NUM_FILTERS: usize = 8;
const KERNEL_T: usize = 5;
const KERNEL_C: usize = 3;
const POOL: usize = 2;
const HIDDEN: usize = 32;
/// Raw MFCC values are divided by this before entering the network.
const INPUT_SCALE: f64 = 20.0;

#[derive(Debug, Error)]
pub enum VictimError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("unknown label: {0}")]
    UnknownLabel(String),
    #[error("model shape mismatch: {0}")]
    ModelShapeMismatch(String),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Ordered, unique label names; index order is fixed and persisted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self, VictimError> {
        if labels.len() < 2 {
            return Err(VictimError::InsufficientData(format!(
                "need at least 2 labels, got {}",
                labels.len()
            )));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(VictimError::InsufficientData(format!(
                    "duplicate label {a:?}"
                )));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 42,
        }
    }
}

/// A labeled clip with a stable id (file stem or synthetic index).
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub label: String,
    pub id: String,
    pub clip: AudioClip,
}

/// Derived layer dimensions for a given dsp config and label count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims {
    frames: usize,
    ceps: usize,
    conv_t: usize,
    conv_c: usize,
    pool_t: usize,
    pool_c: usize,
    flat: usize,
    k: usize,
}

impl Dims {
    fn derive(dsp: &DspConfig, k: usize) -> Result<Self, VictimError> {
        let frames = dsp.num_frames(CANONICAL_SAMPLES);
        let ceps = dsp.num_cepstra;
        if frames < KERNEL_T || ceps < KERNEL_C {
            return Err(VictimError::ModelShapeMismatch(format!(
                "feature matrix {frames}x{ceps} smaller than conv kernel {KERNEL_T}x{KERNEL_C}"
            )));
        }
        let conv_t = frames - KERNEL_T + 1;
        let conv_c = ceps - KERNEL_C + 1;
        let pool_t = conv_t / POOL;
        let pool_c = conv_c / POOL;
        Ok(Self {
            frames,
            ceps,
            conv_t,
            conv_c,
            pool_t,
            pool_c,
            flat: NUM_FILTERS * pool_t * pool_c,
            k,
        })
    }
}

/// Identifies one trainable parameter block for gradient probing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    ConvW,
    ConvB,
    HiddenW,
    HiddenB,
    OutW,
    OutB,
}

pub const PARAM_BLOCKS: [ParamBlock; 6] = [
    ParamBlock::ConvW,
    ParamBlock::ConvB,
    ParamBlock::HiddenW,
    ParamBlock::HiddenB,
    ParamBlock::OutW,
    ParamBlock::OutB,
];

/// Per-block gradients in the same layout as the stored weights.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl Grads {
    fn zeros(d: &Dims) -> Self {
        Self {
            conv_w: vec![0.0; NUM_FILTERS * KERNEL_T * KERNEL_C],
            conv_b: vec![0.0; NUM_FILTERS],
            fc1_w: vec![0.0; HIDDEN * d.flat],
            fc1_b: vec![0.0; HIDDEN],
            out_w: vec![0.0; d.k * HIDDEN],
            out_b: vec![0.0; d.k],
        }
    }

    pub fn block(&self, b: ParamBlock) -> &[f64] {
        match b {
            ParamBlock::ConvW => &self.conv_w,
            ParamBlock::ConvB => &self.conv_b,
            ParamBlock::HiddenW => &self.fc1_w,
            ParamBlock::HiddenB => &self.fc1_b,
            ParamBlock::OutW => &self.out_w,
            ParamBlock::OutB => &self.out_b,
        }
    }
}

/// The black-box oracle: CNN classifier over MFCC features.
pub struct VictimModel {
    label_set: LabelSet,
    dsp_config: DspConfig,
    extractor: MfccExtractor,
    dims: Dims,
    conv_w: Vec<f32>,
    conv_b: Vec<f32>,
    fc1_w: Vec<f32>,
    fc1_b: Vec<f32>,
    out_w: Vec<f32>,
    out_b: Vec<f32>,
    query_counter: AtomicU64,
}

impl Clone for VictimModel {
    fn clone(&self) -> Self {
        Self {
            label_set: self.label_set.clone(),
            dsp_config: self.dsp_config.clone(),
            extractor: self.extractor.clone(),
            dims: self.dims,
            conv_w: self.conv_w.clone(),
            conv_b: self.conv_b.clone(),
            fc1_w: self.fc1_w.clone(),
            fc1_b: self.fc1_b.clone(),
            out_w: self.out_w.clone(),
            out_b: self.out_b.clone(),
            query_counter: AtomicU64::new(self.query_counter.load(Ordering::Relaxed)),
        }
    }
}

struct ForwardCache {
    conv_pre: Vec<f64>,  // NUM_FILTERS * conv_t * conv_c
    pool_out: Vec<f64>,  // flat
    pool_src: Vec<usize>, // index into conv_pre per pooled cell
    fc1_pre: Vec<f64>,
    fc1_out: Vec<f64>,
    probs: Vec<f64>,
}

impl VictimModel {
    /// Fresh model with seeded uniform init (fan-balanced per block).
    pub fn new(
        label_set: LabelSet,
        dsp_config: DspConfig,
        seed: u64,
    ) -> Result<Self, VictimError> {
        let dims = Dims::derive(&dsp_config, label_set.len())?;
        let extractor = MfccExtractor::new(dsp_config.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |n: usize, fan_in: usize, fan_out: usize| -> Vec<f32> {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-s..s) as f32).collect()
        };
        let conv_w = init(
            NUM_FILTERS * KERNEL_T * KERNEL_C,
            KERNEL_T * KERNEL_C,
            NUM_FILTERS,
        );
        let fc1_w = init(HIDDEN * dims.flat, dims.flat, HIDDEN);
        let out_w = init(dims.k * HIDDEN, HIDDEN, dims.k);
        Ok(Self {
            label_set,
            dsp_config,
            extractor,
            dims,
            conv_w,
            conv_b: vec![0.0; NUM_FILTERS],
            fc1_w,
            fc1_b: vec![0.0; HIDDEN],
            out_w,
            out_b: vec![0.0; dims.k],
            query_counter: AtomicU64::new(0),
        })
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn dsp_config(&self) -> &DspConfig {
        &self.dsp_config
    }

    pub fn num_labels(&self) -> usize {
        self.dims.k
    }

    /// Monotone number of predict calls since construction.
    pub fn query_count(&self) -> u64 {
        self.query_counter.load(Ordering::Relaxed)
    }

    /// MFCC features flattened row-major and scaled for the network input.
    pub fn prepare(&self, clip: &AudioClip) -> Result<Vec<f64>, VictimError> {
        if clip.len() != CANONICAL_SAMPLES {
            return Err(VictimError::ModelShapeMismatch(format!(
                "clip has {} samples, expected {CANONICAL_SAMPLES}",
                clip.len()
            )));
        }
        let feats = self.extractor.mfcc(clip)?;
        let mut out = Vec::with_capacity(self.dims.frames * self.dims.ceps);
        for row in &feats.values {
            for &v in row {
                out.push(v / INPUT_SCALE);
            }
        }
        Ok(out)
    }

    fn forward(&self, z: &[f64]) -> ForwardCache {
        let d = &self.dims;
        let mut conv_pre = vec![0.0; NUM_FILTERS * d.conv_t * d.conv_c];
        for f in 0..NUM_FILTERS {
            let bias = self.conv_b[f] as f64;
            for t in 0..d.conv_t {
                for c in 0..d.conv_c {
                    let mut acc = bias;
                    for kt in 0..KERNEL_T {
                        for kc in 0..KERNEL_C {
                            let w = self.conv_w[(f * KERNEL_T + kt) * KERNEL_C + kc] as f64;
                            acc += w * z[(t + kt) * d.ceps + (c + kc)];
                        }
                    }
                    conv_pre[(f * d.conv_t + t) * d.conv_c + c] = acc;
                }
            }
        }
        let mut pool_out = vec![0.0; d.flat];
        let mut pool_src = vec![0usize; d.flat];
        for f in 0..NUM_FILTERS {
            for pt in 0..d.pool_t {
                for pc in 0..d.pool_c {
                    let mut best_v = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for dt in 0..POOL {
                        for dc in 0..POOL {
                            let idx = (f * d.conv_t + pt * POOL + dt) * d.conv_c + pc * POOL + dc;
                            let v = conv_pre[idx].max(0.0); // ReLU before pooling
                            if v > best_v {
                                best_v = v;
                                best_i = idx;
                            }
                        }
                    }
                    let o = (f * d.pool_t + pt) * d.pool_c + pc;
                    pool_out[o] = best_v;
                    pool_src[o] = best_i;
                }
            }
        }
        let mut fc1_pre = vec![0.0; HIDDEN];
        for (j, pre) in fc1_pre.iter_mut().enumerate() {
            let mut acc = self.fc1_b[j] as f64;
            for (i, &p) in pool_out.iter().enumerate() {
                acc += self.fc1_w[j * d.flat + i] as f64 * p;
            }
            *pre = acc;
        }
        let fc1_out: Vec<f64> = fc1_pre.iter().map(|&v| v.max(0.0)).collect();
        let mut logits = vec![0.0; d.k];
        for (k, logit) in logits.iter_mut().enumerate() {
            let mut acc = self.out_b[k] as f64;
            for (j, &h) in fc1_out.iter().enumerate() {
                acc += self.out_w[k * HIDDEN + j] as f64 * h;
            }
            *logit = acc;
        }
        let probs = stable_softmax(&logits);
        ForwardCache {
            conv_pre,
            pool_out,
            pool_src,
            fc1_pre,
            fc1_out,
            probs,
        }
    }

    /// Black-box prediction; increments the query counter.
    pub fn predict(&self, clip: &AudioClip) -> Result<ProbVector, VictimError> {
        let z = self.prepare(clip)?;
        self.query_counter.fetch_add(1, Ordering::Relaxed);
        Ok(ProbVector(self.forward(&z).probs))
    }

    /// Cross-entropy loss for one prepared example.
    pub fn loss(&self, feats: &[f64], label: usize) -> f64 {
        -self.forward(feats).probs[label].max(1e-300).ln()
    }

    /// Hash of the ReLU and pooling activation pattern for one example.
    /// Finite-difference probes are only valid when the pattern is the same
    /// on both sides of the step; the loss has kinks where it changes.
    pub fn activation_signature(&self, feats: &[f64]) -> u64 {
        let cache = self.forward(feats);
        let mut h = 0xcbf29ce484222325u64;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x100000001b3);
        };
        for &p in &cache.conv_pre {
            mix((p > 0.0) as u64);
        }
        for &s in &cache.pool_src {
            mix(s as u64);
        }
        for &p in &cache.fc1_pre {
            mix((p > 0.0) as u64);
        }
        h
    }

    /// Analytic gradients of [`Self::loss`] for one prepared example.
    pub fn loss_grads(&self, feats: &[f64], label: usize) -> Grads {
        let mut g = Grads::zeros(&self.dims);
        self.accumulate_grads(feats, label, &mut g);
        g
    }

    fn accumulate_grads(&self, z: &[f64], label: usize, g: &mut Grads) -> f64 {
        let d = &self.dims;
        let cache = self.forward(z);
        let loss = -cache.probs[label].max(1e-300).ln();

        let mut dlogits = cache.probs.clone();
        dlogits[label] -= 1.0;

        for k in 0..d.k {
            g.out_b[k] += dlogits[k];
            for j in 0..HIDDEN {
                g.out_w[k * HIDDEN + j] += dlogits[k] * cache.fc1_out[j];
            }
        }
        let mut dh = vec![0.0; HIDDEN];
        for j in 0..HIDDEN {
            if cache.fc1_pre[j] > 0.0 {
                let mut acc = 0.0;
                for k in 0..d.k {
                    acc += self.out_w[k * HIDDEN + j] as f64 * dlogits[k];
                }
                dh[j] = acc;
            }
        }
        let mut dpool = vec![0.0; d.flat];
        for j in 0..HIDDEN {
            if dh[j] != 0.0 {
                g.fc1_b[j] += dh[j];
                for i in 0..d.flat {
                    g.fc1_w[j * d.flat + i] += dh[j] * cache.pool_out[i];
                    dpool[i] += self.fc1_w[j * d.flat + i] as f64 * dh[j];
                }
            }
        }
        // route through max pool, then through ReLU on the conv pre-activation
        let mut dpre = vec![0.0; NUM_FILTERS * d.conv_t * d.conv_c];
        for (o, &src) in cache.pool_src.iter().enumerate() {
            if cache.conv_pre[src] > 0.0 {
                dpre[src] += dpool[o];
            }
        }
        for f in 0..NUM_FILTERS {
            for t in 0..d.conv_t {
                for c in 0..d.conv_c {
                    let dv = dpre[(f * d.conv_t + t) * d.conv_c + c];
                    if dv != 0.0 {
                        g.conv_b[f] += dv;
                        for kt in 0..KERNEL_T {
                            for kc in 0..KERNEL_C {
                                g.conv_w[(f * KERNEL_T + kt) * KERNEL_C + kc] +=
                                    dv * z[(t + kt) * d.ceps + (c + kc)];
                            }
                        }
                    }
                }
            }
        }
        loss
    }

    fn apply_update(&mut self, g: &Grads, step: f64) {
        let upd = |w: &mut Vec<f32>, gr: &[f64]| {
            for (wi, gi) in w.iter_mut().zip(gr) {
                *wi = (*wi as f64 - step * gi) as f32;
            }
        };
        upd(&mut self.conv_w, &g.conv_w);
        upd(&mut self.conv_b, &g.conv_b);
        upd(&mut self.fc1_w, &g.fc1_w);
        upd(&mut self.fc1_b, &g.fc1_b);
        upd(&mut self.out_w, &g.out_w);
        upd(&mut self.out_b, &g.out_b);
    }

    pub fn param_len(&self, b: ParamBlock) -> usize {
        self.params(b).len()
    }

    pub fn param(&self, b: ParamBlock, i: usize) -> f32 {
        self.params(b)[i]
    }

    pub fn set_param(&mut self, b: ParamBlock, i: usize, v: f32) {
        self.params_mut(b)[i] = v;
    }

    fn params(&self, b: ParamBlock) -> &[f32] {
        match b {
            ParamBlock::ConvW => &self.conv_w,
            ParamBlock::ConvB => &self.conv_b,
            ParamBlock::HiddenW => &self.fc1_w,
            ParamBlock::HiddenB => &self.fc1_b,
            ParamBlock::OutW => &self.out_w,
            ParamBlock::OutB => &self.out_b,
        }
    }

    fn params_mut(&mut self, b: ParamBlock) -> &mut [f32] {
        match b {
            ParamBlock::ConvW => &mut self.conv_w,
            ParamBlock::ConvB => &mut self.conv_b,
            ParamBlock::HiddenW => &mut self.fc1_w,
            ParamBlock::HiddenB => &mut self.fc1_b,
            ParamBlock::OutW => &mut self.out_w,
            ParamBlock::OutB => &mut self.out_b,
        }
    }
}

impl Oracle for VictimModel {
    /// Panics on non-canonical clips; the attack only ever submits clips
    /// derived from a validated original.
    fn predict(&self, clip: &AudioClip) -> ProbVector {
        VictimModel::predict(self, clip).expect("canonical clip")
    }

    fn query_count(&self) -> u64 {
        VictimModel::query_count(self)
    }
}

fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Trains a fresh model with mini-batch SGD; deterministic for a given seed.
pub fn train(
    corpus: &[LabeledClip],
    dsp_config: &DspConfig,
    hyper: &TrainConfig,
) -> Result<VictimModel, VictimError> {
    let mut labels: Vec<String> = corpus.iter().map(|c| c.label.clone()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(VictimError::InsufficientData(format!(
            "need at least 2 labels, got {}",
            labels.len()
        )));
    }
    for l in &labels {
        let n = corpus.iter().filter(|c| &c.label == l).count();
        if n < 2 {
            return Err(VictimError::InsufficientData(format!(
                "label {l:?} has only {n} clip(s), need at least 2"
            )));
        }
    }
    let label_set = LabelSet::new(labels)?;
    let mut model = VictimModel::new(label_set, dsp_config.clone(), hyper.seed)?;

    // features are fixed across epochs, extract once
    let mut examples = Vec::with_capacity(corpus.len());
    for c in corpus {
        let z = model.prepare(&c.clip)?;
        let y = model.label_set.index_of(&c.label).unwrap();
        examples.push((z, y));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let batch = hyper.batch_size.max(1);
    for _epoch in 0..hyper.epochs {
        // Fisher-Yates with the run's rng keeps the schedule seeded
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch) {
            let mut g = Grads::zeros(&model.dims);
            for &idx in chunk {
                let (z, y) = &examples[idx];
                model.accumulate_grads(z, *y, &mut g);
            }
            model.apply_update(&g, hyper.learning_rate / chunk.len() as f64);
        }
    }
    Ok(model)
}

/// Fraction of clips whose argmax prediction equals the true label.
pub fn accuracy(model: &VictimModel, corpus: &[LabeledClip]) -> Result<f64, VictimError> {
    if corpus.is_empty() {
        return Err(VictimError::InsufficientData("empty corpus".into()));
    }
    let mut correct = 0usize;
    for c in corpus {
        let truth = model
            .label_set
            .index_of(&c.label)
            .ok_or_else(|| VictimError::UnknownLabel(c.label.clone()))?;
        if model.predict(&c.clip)?.argmax() == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / corpus.len() as f64)
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_weights(buf: &mut Vec<u8>, w: &[f32]) {
    push_u32(buf, w.len() as u32);
    for v in w {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], VictimError> {
        if self.pos + n > self.bytes.len() {
            return Err(VictimError::CorruptModel("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, VictimError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, VictimError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn weights(&mut self) -> Result<Vec<f32>, VictimError> {
        let n = self.u32()? as usize;
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

/// Serializes the model: magic, version, labels, dsp config, layer shapes,
/// little-endian f32 weights, trailing SHA-256 checksum.
pub fn save_model(model: &VictimModel, path: impl AsRef<Path>) -> Result<(), VictimError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, FORMAT_VERSION);
    push_u32(&mut buf, model.label_set.len() as u32);
    for l in model.label_set.labels() {
        push_u32(&mut buf, l.len() as u32);
        buf.extend_from_slice(l.as_bytes());
    }
    let d = &model.dsp_config;
    push_u32(&mut buf, d.sample_rate);
    push_u32(&mut buf, d.frame_length as u32);
    push_u32(&mut buf, d.hop_length as u32);
    push_u32(&mut buf, d.fft_size as u32);
    push_u32(&mut buf, d.num_mel_filters as u32);
    push_u32(&mut buf, d.num_cepstra as u32);
    push_f64(&mut buf, d.fmin);
    push_f64(&mut buf, d.fmax);
    push_f64(&mut buf, d.log_floor);
    push_u32(&mut buf, NUM_FILTERS as u32);
    push_u32(&mut buf, KERNEL_T as u32);
    push_u32(&mut buf, KERNEL_C as u32);
    push_u32(&mut buf, POOL as u32);
    push_u32(&mut buf, HIDDEN as u32);
    push_weights(&mut buf, &model.conv_w);
    push_weights(&mut buf, &model.conv_b);
    push_weights(&mut buf, &model.fc1_w);
    push_weights(&mut buf, &model.fc1_b);
    push_weights(&mut buf, &model.out_w);
    push_weights(&mut buf, &model.out_b);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path.as_ref(), buf)?;
    Ok(())
}

/// Loads a model file, verifying checksum and layer shape consistency.
pub fn load_model(path: impl AsRef<Path>) -> Result<VictimModel, VictimError> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.len() < MAGIC.len() + 32 {
        return Err(VictimError::CorruptModel("file too small".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(VictimError::CorruptModel("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(VictimError::CorruptModel("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(VictimError::CorruptModel(format!(
            "unsupported format version {version}"
        )));
    }
    let k = r.u32()? as usize;
    let mut labels = Vec::with_capacity(k);
    for _ in 0..k {
        let n = r.u32()? as usize;
        let s = std::str::from_utf8(r.take(n)?)
            .map_err(|_| VictimError::CorruptModel("label not utf-8".into()))?;
        labels.push(s.to_string());
    }
    let dsp_config = DspConfig {
        sample_rate: r.u32()?,
        frame_length: r.u32()? as usize,
        hop_length: r.u32()? as usize,
        fft_size: r.u32()? as usize,
        num_mel_filters: r.u32()? as usize,
        num_cepstra: r.u32()? as usize,
        fmin: r.f64()?,
        fmax: r.f64()?,
        log_floor: r.f64()?,
    };
    let arch = [r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let expected = [
        NUM_FILTERS as u32,
        KERNEL_T as u32,
        KERNEL_C as u32,
        POOL as u32,
        HIDDEN as u32,
    ];
    if arch != expected {
        return Err(VictimError::ModelShapeMismatch(format!(
            "architecture {arch:?} does not match compiled {expected:?}"
        )));
    }
    let label_set = LabelSet::new(labels)?;
    let dims = Dims::derive(&dsp_config, label_set.len())?;
    let conv_w = r.weights()?;
    let conv_b = r.weights()?;
    let fc1_w = r.weights()?;
    let fc1_b = r.weights()?;
    let out_w = r.weights()?;
    let out_b = r.weights()?;
    let shapes = [
        (conv_w.len(), NUM_FILTERS * KERNEL_T * KERNEL_C, "conv_w"),
        (conv_b.len(), NUM_FILTERS, "conv_b"),
        (fc1_w.len(), HIDDEN * dims.flat, "fc1_w"),
        (fc1_b.len(), HIDDEN, "fc1_b"),
        (out_w.len(), dims.k * HIDDEN, "out_w"),
        (out_b.len(), dims.k, "out_b"),
    ];
    for (got, want, name) in shapes {
        if got != want {
            return Err(VictimError::ModelShapeMismatch(format!(
                "{name} has {got} weights, expected {want}"
            )));
        }
    }
    let extractor = MfccExtractor::new(dsp_config.clone())?;
    Ok(VictimModel {
        label_set,
        dsp_config,
        extractor,
        dims,
        conv_w,
        conv_b,
        fc1_w,
        fc1_b,
        out_w,
        out_b,
        query_counter: AtomicU64::new(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic_corpus;

    fn small_corpus() -> Vec<LabeledClip> {
        // widely separated tone classes so the two labels are trivially separable
        let mut out = Vec::new();
        for &li in &[0usize, 9] {
            for ci in 0..8 {
                out.push(LabeledClip {
                    label: crate::corpus::SYNTH_LABELS[li].to_string(),
                    id: format!("{li}_{ci}"),
                    clip: crate::corpus::synthetic_clip(li, ci, 99),
                });
            }
        }
        out
    }

    fn quick_train() -> VictimModel {
        let hyper = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        train(&small_corpus(), &DspConfig::default(), &hyper).unwrap()
    }

    fn random_features(model: &VictimModel, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = model.dims.frames * model.dims.ceps;
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn predictions_are_normalized_probabilities() {
        let labels = LabelSet::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let model = VictimModel::new(labels, DspConfig::default(), 5).unwrap();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<i16> = (0..CANONICAL_SAMPLES).map(|_| rng.gen()).collect();
            let p = model.predict(&AudioClip::new(samples, 16000)).unwrap();
            assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(p.0.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn zero_final_layer_gives_uniform_distribution() {
        let labels = LabelSet::new(vec!["a".into(), "b".into(), "c".into(), "d".into()]).unwrap();
        let mut model = VictimModel::new(labels, DspConfig::default(), 5).unwrap();
        for i in 0..model.param_len(ParamBlock::OutW) {
            model.set_param(ParamBlock::OutW, i, 0.0);
        }
        for i in 0..model.param_len(ParamBlock::OutB) {
            model.set_param(ParamBlock::OutB, i, 0.0);
        }
        let clip = AudioClip::new(vec![123; CANONICAL_SAMPLES], 16000);
        let p = model.predict(&clip).unwrap();
        for &x in &p.0 {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_classes_reach_full_training_accuracy() {
        let model = quick_train();
        let acc = accuracy(&model, &small_corpus()).unwrap();
        assert_eq!(acc, 1.0, "tone classes should separate within 50 epochs");
    }

    #[test]
    fn training_is_deterministic() {
        let hyper = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let a = train(&small_corpus(), &DspConfig::default(), &hyper).unwrap();
        let b = train(&small_corpus(), &DspConfig::default(), &hyper).unwrap();
        for block in PARAM_BLOCKS {
            for i in 0..a.param_len(block) {
                assert_eq!(a.param(block, i).to_bits(), b.param(block, i).to_bits());
            }
        }
    }

    #[test]
    fn insufficient_data_rejected() {
        let one_label: Vec<LabeledClip> = synthetic_corpus(2, 4, 0)
            .into_iter()
            .filter(|c| c.label == "one")
            .collect();
        assert!(matches!(
            train(&one_label, &DspConfig::default(), &TrainConfig::default()),
            Err(VictimError::InsufficientData(_))
        ));
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let labels = LabelSet::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let mut model = VictimModel::new(labels, DspConfig::default(), 17).unwrap();
        let feats = random_features(&model, 3);
        let label = 1usize;
        let analytic = model.loss_grads(&feats, label);
        let signature = model.activation_signature(&feats);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-3f32;
        for block in PARAM_BLOCKS {
            let mut probes = 0;
            let mut draws = 0;
            while probes < 10 && draws < 500 {
                draws += 1;
                let i = rng.gen_range(0..model.param_len(block));
                let w0 = model.param(block, i);
                model.set_param(block, i, w0 + h);
                let lp = model.loss(&feats, label);
                let sp = model.activation_signature(&feats);
                let wp = model.param(block, i);
                model.set_param(block, i, w0 - h);
                let lm = model.loss(&feats, label);
                let sm = model.activation_signature(&feats);
                let wm = model.param(block, i);
                model.set_param(block, i, w0);
                if sp != signature || sm != signature {
                    continue; // stepped across a ReLU/pool kink, FD invalid
                }
                probes += 1;
                let numeric = (lp - lm) / (wp as f64 - wm as f64);
                let ga = analytic.block(block)[i];
                let tol = 1e-4 * ga.abs().max(numeric.abs()).max(1e-4);
                assert!(
                    (ga - numeric).abs() <= tol,
                    "{block:?}[{i}]: analytic {ga} vs numeric {numeric}"
                );
            }
            assert!(probes >= 10, "too few clean probes for {block:?}");
        }
    }

    #[test]
    fn accuracy_on_own_predictions_is_one() {
        let model = quick_train();
        let corpus: Vec<LabeledClip> = small_corpus()
            .into_iter()
            .map(|mut c| {
                let pred = model.predict(&c.clip).unwrap().argmax();
                c.label = model.label_set().name(pred).to_string();
                c
            })
            .collect();
        assert_eq!(accuracy(&model, &corpus).unwrap(), 1.0);
    }

    #[test]
    fn unknown_label_in_accuracy_corpus() {
        let model = quick_train();
        let mut corpus = small_corpus();
        corpus[0].label = "zebra".into();
        assert!(matches!(
            accuracy(&model, &corpus),
            Err(VictimError::UnknownLabel(_))
        ));
    }

    #[test]
    fn query_counter_is_monotone() {
        let labels = LabelSet::new(vec!["a".into(), "b".into()]).unwrap();
        let model = VictimModel::new(labels, DspConfig::default(), 0).unwrap();
        assert_eq!(model.query_count(), 0);
        let clip = AudioClip::new(vec![0; CANONICAL_SAMPLES], 16000);
        for n in 1..=4u64 {
            model.predict(&clip).unwrap();
            assert_eq!(model.query_count(), n);
        }
    }

    #[test]
    fn persistence_roundtrip_is_prediction_exact() {
        let model = quick_train();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.label_set(), model.label_set());
        assert_eq!(loaded.dsp_config(), model.dsp_config());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..3 {
            let samples: Vec<i16> = (0..CANONICAL_SAMPLES).map(|_| rng.gen()).collect();
            let clip = AudioClip::new(samples, 16000);
            let a = model.predict(&clip).unwrap();
            let b = loaded.predict(&clip).unwrap();
            for (x, y) in a.0.iter().zip(&b.0) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_model_file_is_corrupt() {
        let model = quick_train();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(VictimError::CorruptModel(_))
        ));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let model = quick_train();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(VictimError::CorruptModel(_))
        ));
    }

    #[test]
    fn inconsistent_label_count_is_shape_mismatch() {
        // hand-build a file whose label count disagrees with the final layer
        let model = quick_train();
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("model.bin");
        save_model(&model, &good).unwrap();
        let bytes = fs::read(&good).unwrap();
        // body without checksum
        let body = &bytes[..bytes.len() - 32];
        // splice in a third label name after the existing two
        let mut edited = Vec::new();
        edited.extend_from_slice(&body[..12]);
        edited.extend_from_slice(&3u32.to_le_bytes()); // label count 3
        let mut pos = 16; // past magic+version+count
        for _ in 0..2 {
            let n = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()) as usize;
            edited.extend_from_slice(&body[pos..pos + 4 + n]);
            pos += 4 + n;
        }
        edited.extend_from_slice(&5u32.to_le_bytes());
        edited.extend_from_slice(b"extra");
        edited.extend_from_slice(&body[pos..]);
        let digest = Sha256::digest(&edited);
        edited.extend_from_slice(&digest);
        let bad = dir.path().join("bad.bin");
        fs::write(&bad, edited).unwrap();
        assert!(matches!(
            load_model(&bad),
            Err(VictimError::ModelShapeMismatch(_))
        ));
    }
}
