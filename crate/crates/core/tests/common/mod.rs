#![allow(dead_code)]

use std::sync::Arc;

use gdpo_core::align::LossReport;
use gdpo_core::datagen::{build_preference_pairs, generate_topics, DistributionSource, TaskKind, Topic, TopicSpec};
use gdpo_core::policy::{ModelConfig, NeuralConfig, Policy, TabularConfig};
use gdpo_core::vocab::{encode_all, EncodedExample, Vocabulary};
use gdpo_core::Result;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SKEWED_FIVE: [f64; 5] = [0.06, 0.56, 0.24, 0.08, 0.06];

pub struct Fixture {
    pub vocab: Arc<Vocabulary>,
    pub topics: Vec<Topic>,
    pub examples: Vec<EncodedExample>,
}

pub fn fixture(topics: usize, pairs: usize, seed: u64) -> Fixture {
    let spec = TopicSpec {
        topics,
        beliefs: 5,
        styles: 2,
        task: TaskKind::Opinion,
        distribution: DistributionSource::Explicit {
            probs: vec![SKEWED_FIVE.to_vec()],
        },
        seed,
    };
    let topics = generate_topics(&spec).unwrap();
    let vocab = Arc::new(Vocabulary::standard(topics.len()).unwrap());
    let raw: Vec<_> = topics
        .iter()
        .flat_map(|t| build_preference_pairs(t, pairs, seed).unwrap())
        .collect();
    let examples = encode_all(&vocab, &raw).unwrap();
    Fixture {
        vocab,
        topics,
        examples,
    }
}

pub fn small_neural() -> NeuralConfig {
    NeuralConfig {
        width: 8,
        blocks: 2,
        hidden: 8,
        context_length: 24,
        init_seed: 3,
    }
}

/// Randomized policy for either backend.
pub fn random_policy(f: &Fixture, neural: bool, seed: u64) -> Policy {
    let config = if neural {
        ModelConfig::Neural(NeuralConfig {
            init_seed: seed,
            ..small_neural()
        })
    } else {
        ModelConfig::Tabular(TabularConfig::default())
    };
    let mut p = Policy::for_topics(f.vocab.clone(), &config, &f.topics).unwrap();
    if !neural {
        p.randomize(0.7, seed);
    }
    p
}

/// Relative error `|a - n| / max(|a|, |n|)` between the analytic gradient
/// and central differences on sampled coordinates. Half the coordinates are
/// drawn from where the analytic gradient is nonzero.
pub fn grad_check(
    policy: &Policy,
    loss: impl Fn(&Policy) -> Result<LossReport>,
    coords: usize,
    seed: u64,
) -> f64 {
    let h = 1e-5;
    let analytic = loss(policy).unwrap().grad;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nonzero: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i] != 0.0).collect();
    let mut picked: Vec<usize> = sample(&mut rng, analytic.len(), coords / 2).into_vec();
    if !nonzero.is_empty() {
        let k = (coords - coords / 2).min(nonzero.len());
        picked.extend(sample(&mut rng, nonzero.len(), k).into_iter().map(|i| nonzero[i]));
    }
    let mut diff = 0.0;
    let mut norm_a = 0.0;
    let mut norm_n = 0.0;
    for &i in &picked {
        let mut plus = policy.clone();
        plus.params_mut()[i] += h;
        let mut minus = policy.clone();
        minus.params_mut()[i] -= h;
        let fd = (loss(&plus).unwrap().loss - loss(&minus).unwrap().loss) / (2.0 * h);
        diff += (fd - analytic[i]).powi(2);
        norm_a += analytic[i].powi(2);
        norm_n += fd.powi(2);
    }
    let scale = norm_a.sqrt().max(norm_n.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}
