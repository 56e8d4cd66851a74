//! Shared test fixtures: a synthetic two-language corpus with a
//! programmatic similarity label, plus small run configurations.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nsim_core::corpus::{ArticleRecord, Lang, Provenance, ScoreVector, OVERALL_INDEX};
use nsim_core::eval::clip;
use nsim_core::model::ModelConfig;
use nsim_core::train::{LossConfig, OptimizerConfig};

/// Knobs of the synthetic corpus generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    /// Number of shared topics across the two toy languages.
    pub topics: usize,
    /// Vocabulary size per topic per language.
    pub words_per_topic: usize,
    /// Inclusive token-count range per document.
    pub doc_len: (usize, usize),
    /// Standard deviation of the noisy auxiliary copies of Overall.
    pub aux_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_pairs: 2000,
            topics: 3,
            words_per_topic: 24,
            doc_len: (18, 30),
            aux_noise: 0.25,
            seed: 99,
        }
    }
}

fn word(lang: u8, topic: usize, index: usize) -> String {
    // Purely alphanumeric so the hashing tokenizer keeps each word whole.
    match lang {
        0 => format!("qa{topic}x{index}"),
        _ => format!("qb{topic}x{index}"),
    }
}

/// Generates labeled article pairs in two toy "languages".
///
/// Each pair draws a topic and a similarity level p: the first document
/// speaks only about its topic, the second mixes on-topic words (with
/// probability p) with words from other topics. The Overall label is the
/// realized on-topic fraction of the second document mapped to [1, 4]; the
/// six auxiliary labels are noisy clipped copies of Overall.
pub fn generate_corpus(spec: &SyntheticSpec) -> Vec<ArticleRecord> {
    assert!(spec.topics >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.n_pairs);
    for i in 0..spec.n_pairs {
        let topic = rng.gen_range(0..spec.topics);
        let p: f64 = rng.gen_range(0.0..=1.0);

        let n1 = rng.gen_range(spec.doc_len.0..=spec.doc_len.1);
        let doc1: Vec<String> = (0..n1)
            .map(|_| word(0, topic, rng.gen_range(0..spec.words_per_topic)))
            .collect();

        let n2 = rng.gen_range(spec.doc_len.0..=spec.doc_len.1);
        let mut on_topic = 0usize;
        let doc2: Vec<String> = (0..n2)
            .map(|_| {
                if rng.gen_bool(p) {
                    on_topic += 1;
                    word(1, topic, rng.gen_range(0..spec.words_per_topic))
                } else {
                    let mut other = rng.gen_range(0..spec.topics - 1);
                    if other >= topic {
                        other += 1;
                    }
                    word(1, other, rng.gen_range(0..spec.words_per_topic))
                }
            })
            .collect();

        let overall = 1.0 + 3.0 * on_topic as f64 / n2 as f64;
        let mut scores = [overall; 7];
        for (dim, value) in scores.iter_mut().enumerate() {
            if dim != OVERALL_INDEX {
                let noise = spec.aux_noise * normal_draw(&mut rng);
                *value = clip(overall + noise, 1.0, 4.0);
            }
        }

        records.push(ArticleRecord {
            pair_id: format!("{}_{}", 5_000_000 + i, 6_000_000 + i),
            lang1: Lang::En,
            lang2: Lang::De,
            title1: doc1[..3.min(doc1.len())].join(" "),
            text1: doc1[3.min(doc1.len())..].join(" "),
            title2: doc2[..3.min(doc2.len())].join(" "),
            text2: doc2[3.min(doc2.len())..].join(" "),
            scores: ScoreVector::from_array(scores),
            provenance: Provenance::Original,
        });
    }
    records
}

fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Model sized for the synthetic runs: small enough to train on one core
/// in seconds per epoch. The relatively high dropout keeps the forward
/// passes visibly stochastic, which the consistency-loss comparisons need.
pub fn synthetic_model_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 8192,
        embed_dim: 32,
        num_layers: 2,
        num_heads: 2,
        ff_dim: 64,
        dropout_p: 0.2,
        max_positions: 515,
        head_layers: 2,
        head_activation: true,
    }
}

/// From-scratch optimizer settings for the synthetic runs.
pub fn synthetic_optimizer_config(epochs: usize) -> OptimizerConfig {
    OptimizerConfig {
        learning_rate: 1e-3,
        batch_size: 32,
        epochs,
        ..OptimizerConfig::default()
    }
}

/// The baseline objective: w = 1, no consistency term, single forward.
pub fn baseline_loss_config() -> LossConfig {
    LossConfig {
        overall_weight: 1.0,
        rdrop_alpha: 0.0,
        forwards: 1,
    }
}
