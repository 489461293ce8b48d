//! Gradient-free genetic search for adversarial perturbations confined to
//! the 8 least-significant bits of each sample.
//!
//! The engine only talks to the victim through the [`Oracle`] trait: one
//! probability vector per query, nothing else. All randomness flows from the
//! config seed through a single sequential generator, so a fixed seed and a
//! fixed oracle give a bit-identical result regardless of how callers
//! parallelize around the engine.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio_io::AudioClip;
use crate::eval::{noise_metrics, NoiseReport};
use crate::oracle::{Oracle, ProbVector};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
}

/// Genetic search parameters. Only `max_iter = 500` is fixed by protocol;
/// everything else is configuration.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub population_size: usize,
    pub max_iter: usize,
    pub temperature: f64,
    /// Per-sample mutation probability.
    pub mutation_prob: f64,
    /// Max |delta| applied to a mutated sample, before LSB projection.
    pub mutation_span: i32,
    /// Fraction of clip samples perturbed at initialization.
    pub perturb_fraction: f64,
    pub elite_count: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            population_size: 20,
            max_iter: 500,
            temperature: 0.01,
            mutation_prob: 0.005,
            mutation_span: 255,
            perturb_fraction: 0.1,
            elite_count: 2,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.population_size == 0 {
            return Err(AttackError::InvalidConfig("population_size must be > 0".into()));
        }
        if !(self.perturb_fraction > 0.0 && self.perturb_fraction <= 1.0) {
            return Err(AttackError::InvalidConfig(format!(
                "perturb_fraction {} must be in (0, 1]",
                self.perturb_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(AttackError::InvalidConfig(format!(
                "mutation_prob {} must be in [0, 1]",
                self.mutation_prob
            )));
        }
        if !(0..=255).contains(&self.mutation_span) {
            return Err(AttackError::InvalidConfig(format!(
                "mutation_span {} must be in 0..=255",
                self.mutation_span
            )));
        }
        if self.elite_count >= self.population_size {
            return Err(AttackError::InvalidConfig(format!(
                "elite_count {} must be below population_size {}",
                self.elite_count, self.population_size
            )));
        }
        if self.temperature <= 0.0 {
            return Err(AttackError::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Attack objective: drive the oracle toward a target label, or away from
/// the source label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Targeted { target: usize },
    Untargeted { source: usize },
}

impl Goal {
    fn fitness(&self, probs: &ProbVector) -> f64 {
        match *self {
            Goal::Targeted { target } => probs.0[target],
            Goal::Untargeted { source } => 1.0 - probs.0[source],
        }
    }

    fn satisfied(&self, argmax: usize) -> bool {
        match *self {
            Goal::Targeted { target } => argmax == target,
            Goal::Untargeted { source } => argmax != source,
        }
    }
}

/// One LSB-constrained perturbed clip, with its last evaluated fitness.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub clip: AudioClip,
    pub fitness: Option<f64>,
}

/// GA state: a constant-size set of candidates.
#[derive(Debug, Clone)]
pub struct Population {
    pub members: Vec<Candidate>,
    pub generation: usize,
}

/// Adversarial clip plus run provenance.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: AudioClip,
    pub success: bool,
    /// Generations whose fitness was evaluated.
    pub iterations_used: usize,
    /// Oracle queries issued by the search loop.
    pub queries_used: u64,
    pub source_label: usize,
    /// Targeted: the requested label. Untargeted: the label actually reached
    /// on success, the source label otherwise.
    pub target_label: usize,
    pub noise: NoiseReport,
}

/// True when every sample of `candidate` shares its high byte with
/// `original` (arithmetic shift semantics).
pub fn satisfies_lsb(original: &AudioClip, candidate: &AudioClip) -> bool {
    original.len() == candidate.len()
        && original
            .samples
            .iter()
            .zip(&candidate.samples)
            .all(|(&o, &c)| (o >> 8) == (c >> 8))
}

/// Projects `candidate` onto the LSB-constraint set of `original`: each
/// sample is clamped to the 256-value interval sharing `original`'s high
/// byte, picking the closest admissible value.
pub fn lsb_project(original: &AudioClip, candidate: &AudioClip) -> AudioClip {
    assert_eq!(original.len(), candidate.len(), "length mismatch");
    let samples = original
        .samples
        .iter()
        .zip(&candidate.samples)
        .map(|(&o, &c)| {
            let hi_base = ((o >> 8) as i32) << 8;
            (c as i32).clamp(hi_base, hi_base + 255) as i16
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: original.sample_rate,
        label: None,
    }
}

/// Seeds the search: the original itself plus members with a fresh random
/// subset of samples perturbed by uniform deltas, LSB-projected.
pub fn initialize_population(
    original: &AudioClip,
    config: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Population {
    let n = original.len();
    let subset = ((config.perturb_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut members = Vec::with_capacity(config.population_size);
    members.push(Candidate {
        clip: original.clone(),
        fitness: None,
    });
    for _ in 1..config.population_size {
        let mut clip = original.clone();
        let indices = rand::seq::index::sample(rng, n, subset);
        for i in indices {
            let delta = rng.gen_range(-config.mutation_span..=config.mutation_span);
            clip.samples[i] = (clip.samples[i] as i32 + delta).clamp(-32768, 32767) as i16;
        }
        members.push(Candidate {
            clip: lsb_project(original, &clip),
            fitness: None,
        });
    }
    Population {
        members,
        generation: 0,
    }
}

/// Queries the oracle once per member and returns the fitness scores.
pub fn compute_fitness(population: &Population, oracle: &dyn Oracle, goal: Goal) -> Vec<f64> {
    population
        .members
        .iter()
        .map(|m| goal.fitness(&oracle.predict(&m.clip)))
        .collect()
}

/// softmax(scores / temperature) with max-subtraction for stability.
pub fn selection_probs(scores: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|&s| ((s - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-sample uniform mixing of two parents.
pub fn crossover(parent1: &Candidate, parent2: &Candidate, rng: &mut ChaCha8Rng) -> Candidate {
    assert_eq!(parent1.clip.len(), parent2.clip.len());
    let samples = parent1
        .clip
        .samples
        .iter()
        .zip(&parent2.clip.samples)
        .map(|(&a, &b)| if rng.gen_bool(0.5) { a } else { b })
        .collect();
    Candidate {
        clip: AudioClip {
            samples,
            sample_rate: parent1.clip.sample_rate,
            label: None,
        },
        fitness: None,
    }
}

/// With probability `mutation_prob` per sample, adds a uniform delta in
/// `[-mutation_span, mutation_span]`, then re-projects onto the LSB set.
pub fn mutate(
    child: &Candidate,
    original: &AudioClip,
    config: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Candidate {
    let mut clip = child.clip.clone();
    for s in clip.samples.iter_mut() {
        if rng.gen_bool(config.mutation_prob) {
            let delta = rng.gen_range(-config.mutation_span..=config.mutation_span);
            *s = (*s as i32 + delta).clamp(-32768, 32767) as i16;
        }
    }
    Candidate {
        clip: lsb_project(original, &clip),
        fitness: None,
    }
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// Indices sorted by descending fitness; ties keep the lower index first.
fn rank_by_fitness(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    order
}

/// Delegating oracle that tracks how many queries one attack issued, so
/// budgets stay exact even when several attacks share the victim model.
struct CountingOracle<'a> {
    inner: &'a dyn Oracle,
    queries: AtomicU64,
}

impl Oracle for CountingOracle<'_> {
    fn predict(&self, clip: &AudioClip) -> ProbVector {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(clip)
    }

    fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}

fn run_attack(
    original: &AudioClip,
    goal: Goal,
    oracle: &dyn Oracle,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    config.validate()?;
    let initial = oracle.predict(original);
    let k = initial.len();
    let source = initial.argmax();
    match goal {
        Goal::Targeted { target } => {
            if target >= k {
                return Err(AttackError::InvalidTarget(format!(
                    "label index {target} out of range for {k} labels"
                )));
            }
            if target == source {
                return Err(AttackError::InvalidTarget(format!(
                    "clip already classifies as target label {target}"
                )));
            }
        }
        Goal::Untargeted { source: declared } => {
            if declared >= k {
                return Err(AttackError::InvalidTarget(format!(
                    "label index {declared} out of range for {k} labels"
                )));
            }
            if declared != source {
                return Err(AttackError::InvalidTarget(format!(
                    "clip classifies as {source}, not declared source {declared}"
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut population = initialize_population(original, config, &mut rng);
    // count this attack's own search queries; the oracle's global counter may
    // be shared with concurrent attacks, and the guard query above is
    // excluded from the search budget either way
    let oracle = CountingOracle {
        inner: oracle,
        queries: AtomicU64::new(0),
    };
    let oracle = &oracle;

    let mut best_clip = original.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut iterations = 0usize;

    while iterations < config.max_iter {
        let evals: Vec<ProbVector> = population
            .members
            .iter()
            .map(|m| oracle.predict(&m.clip))
            .collect();
        let scores: Vec<f64> = evals.iter().map(|p| goal.fitness(p)).collect();
        for (m, &s) in population.members.iter_mut().zip(&scores) {
            m.fitness = Some(s);
        }
        iterations += 1;

        let best_idx = rank_by_fitness(&scores)[0];
        if scores[best_idx] > best_score {
            best_score = scores[best_idx];
            best_clip = population.members[best_idx].clip.clone();
        }
        let best_argmax = evals[best_idx].argmax();
        if goal.satisfied(best_argmax) {
            let adversarial = population.members[best_idx].clip.clone();
            let noise = noise_metrics(original, &adversarial).expect("equal lengths");
            return Ok(AttackResult {
                adversarial,
                success: true,
                iterations_used: iterations,
                queries_used: oracle.query_count(),
                source_label: source,
                target_label: match goal {
                    Goal::Targeted { target } => target,
                    Goal::Untargeted { .. } => best_argmax,
                },
                noise,
            });
        }

        let probs = selection_probs(&scores, config.temperature);
        let order = rank_by_fitness(&scores);
        let mut next = Vec::with_capacity(config.population_size);
        for &i in order.iter().take(config.elite_count) {
            next.push(population.members[i].clone());
        }
        while next.len() < config.population_size {
            let p1 = sample_index(&probs, &mut rng);
            let p2 = sample_index(&probs, &mut rng);
            let child = crossover(&population.members[p1], &population.members[p2], &mut rng);
            next.push(mutate(&child, original, config, &mut rng));
        }
        population = Population {
            members: next,
            generation: population.generation + 1,
        };
    }

    let noise = noise_metrics(original, &best_clip).expect("equal lengths");
    Ok(AttackResult {
        adversarial: best_clip,
        success: false,
        iterations_used: iterations,
        queries_used: oracle.query_count(),
        source_label: source,
        target_label: match goal {
            Goal::Targeted { target } => target,
            Goal::Untargeted { .. } => source,
        },
        noise,
    })
}

/// Drives the oracle toward `target`. Fails after `max_iter` generations.
pub fn run_targeted_attack(
    original: &AudioClip,
    target: usize,
    oracle: &dyn Oracle,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    run_attack(original, Goal::Targeted { target }, oracle, config)
}

/// Drives the oracle away from `source`.
pub fn run_untargeted_attack(
    original: &AudioClip,
    source: usize,
    oracle: &dyn Oracle,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    run_attack(original, Goal::Untargeted { source }, oracle, config)
}
