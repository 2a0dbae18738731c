//! Template-based synthetic data: topics with belief distributions and
//! belief-tagged responses, and conditional pairwise preference pairs
//! drawn from them.
//!
//! Accepted beliefs follow each topic's target distribution; rejected
//! beliefs are uniform over the remaining beliefs. Every random stream is
//! keyed by `(seed, purpose, topic)` so results do not depend on the order
//! in which topics are processed.

mod class_map;
mod io;

pub use class_map::{
    generator_words, map_belief_to_class, ClassBeliefMap, TaskKind, MAX_DESCRIPTION_WORDS,
    MAX_STYLES,
};
pub use io::{load_dataset, load_topics, manifest_path_for, save_topics, serialize_dataset};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::belief::{Belief, BeliefDistribution, BeliefSet, ClassToken};
use crate::error::{Error, Result};
use class_map::{BeliefScale, CLOSERS, OPENERS, OPINION_SCALES, REVIEW_SCALE, STANCE};

/// Upper bound on the number of topics; keeps the closed vocabulary under
/// 512 tokens.
pub const MAX_TOPICS: usize = 400;

/// Current on-disk dataset format version.
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Token sequence as word strings.
pub type Words = Vec<String>;

/// Where topic target distributions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistributionSource {
    /// Fixed distributions; topic `t` uses `probs[t % probs.len()]`.
    Explicit { probs: Vec<Vec<f64>> },
    /// Symmetric Dirichlet draws, one per topic.
    Dirichlet { alpha: f64 },
}

/// Parameters of [`generate_topics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub topics: usize,
    pub beliefs: usize,
    pub styles: usize,
    #[serde(default)]
    pub task: TaskKind,
    pub distribution: DistributionSource,
    pub seed: u64,
}

impl TopicSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beliefs > 6 {
            return Err(Error::ClassAlphabetExhausted(self.beliefs));
        }
        if self.beliefs < 2 {
            return Err(Error::InvalidArgument(format!(
                "beliefs per topic must be at least 2, got {}",
                self.beliefs
            )));
        }
        if self.topics == 0 || self.topics > MAX_TOPICS {
            return Err(Error::InvalidArgument(format!(
                "topic count must lie in 1..={MAX_TOPICS}, got {}",
                self.topics
            )));
        }
        if self.styles < 2 || self.styles > MAX_STYLES {
            return Err(Error::InvalidArgument(format!(
                "styles must lie in 2..={MAX_STYLES}, got {}",
                self.styles
            )));
        }
        match &self.distribution {
            DistributionSource::Explicit { probs } => {
                if probs.is_empty() {
                    return Err(Error::InvalidArgument(
                        "explicit distribution list is empty".into(),
                    ));
                }
                for p in probs {
                    if p.len() != self.beliefs {
                        return Err(Error::InvalidArgument(format!(
                            "explicit distribution has {} entries, expected {}",
                            p.len(),
                            self.beliefs
                        )));
                    }
                    BeliefDistribution::new(p.clone())?;
                }
            }
            DistributionSource::Dirichlet { alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "Dirichlet alpha must be positive, got {alpha}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Examples per topic in each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub eval: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Eval, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Eval => 2,
            Split::Test => 3,
        }
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub spec: TopicSpec,
    /// Examples per topic.
    pub splits: SplitSizes,
}

impl DatasetManifest {
    pub fn new(spec: TopicSpec, splits: SplitSizes) -> Self {
        Self {
            format_version: DATASET_FORMAT_VERSION,
            spec,
            splits,
        }
    }

    pub fn examples_per_topic(&self, split: Split) -> usize {
        match split {
            Split::Train => self.splits.train,
            Split::Eval => self.splits.eval,
            Split::Test => self.splits.test,
        }
    }

    pub fn total(&self, split: Split) -> usize {
        self.spec.topics * self.examples_per_topic(split)
    }
}

/// One query with its beliefs, target distribution and response templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub id: usize,
    pub question: Words,
    pub belief_set: BeliefSet,
    pub target_dist: BeliefDistribution,
    /// `templates[belief][style]`.
    pub templates: Vec<Vec<Words>>,
}

impl Topic {
    pub fn num_beliefs(&self) -> usize {
        self.belief_set.len()
    }

    pub fn num_styles(&self) -> usize {
        self.templates.first().map_or(0, Vec::len)
    }

    /// `(belief, style)` of a response that is exactly one of this topic's
    /// templates.
    pub fn find_template(&self, response: &[String]) -> Option<(usize, usize)> {
        self.templates.iter().enumerate().find_map(|(b, styles)| {
            styles
                .iter()
                .position(|t| t.as_slice() == response)
                .map(|s| (b, s))
        })
    }
}

/// A belief-tagged pairwise preference `(x, b_c, y_c) > (b_r, y_r)`.
///
/// Each record carries its topic's question, belief set and target
/// distribution so a dataset file is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceExample {
    pub topic_id: usize,
    pub question: Words,
    pub belief_set: BeliefSet,
    pub target_dist: BeliefDistribution,
    pub accepted_belief: usize,
    pub accepted_response: Words,
    pub rejected_belief: usize,
    pub rejected_response: Words,
}

impl PreferenceExample {
    /// Checks structural invariants, including template provenance when
    /// the topic is available.
    pub fn validate(&self, topic: Option<&Topic>) -> Result<()> {
        let k = self.belief_set.len();
        if self.target_dist.len() != k {
            return Err(Error::LengthMismatch {
                left: self.target_dist.len(),
                right: k,
            });
        }
        if self.accepted_belief >= k || self.rejected_belief >= k {
            return Err(Error::InvalidArgument("belief index out of range".into()));
        }
        if self.accepted_belief == self.rejected_belief {
            return Err(Error::InvalidArgument(
                "accepted and rejected beliefs coincide".into(),
            ));
        }
        if let Some(topic) = topic {
            if topic.id != self.topic_id {
                return Err(Error::UnknownTopic(self.topic_id));
            }
            let tagged = |resp: &Words, belief: usize| {
                topic.templates[belief].iter().any(|t| t == resp)
            };
            if !tagged(&self.accepted_response, self.accepted_belief)
                || !tagged(&self.rejected_response, self.rejected_belief)
            {
                return Err(Error::InvalidArgument(
                    "response is not a template of its belief".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Derives an independent stream seed from a base seed and a path of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

const STREAM_DISTRIBUTION: u64 = 0xD157;
const STREAM_PAIRS: u64 = 0x9A12;

pub fn topic_token(id: usize) -> String {
    format!("topic_{id}")
}

fn scale_for(task: TaskKind, topic: usize) -> &'static BeliefScale {
    match task {
        TaskKind::Opinion => &OPINION_SCALES[topic % OPINION_SCALES.len()],
        TaskKind::Review => &REVIEW_SCALE,
    }
}

/// Builds `spec.topics` topics deterministically from `spec.seed`.
pub fn generate_topics(spec: &TopicSpec) -> Result<Vec<Topic>> {
    spec.validate()?;
    let classes = match spec.task {
        TaskKind::Opinion => class_map::opinion_classes(spec.beliefs)?,
        TaskKind::Review => class_map::review_classes(spec.beliefs)?,
    };
    (0..spec.topics)
        .map(|id| {
            let scale = scale_for(spec.task, id);
            let topic_word = topic_token(id);
            let question = vec![
                scale.frame[0].to_owned(),
                scale.frame[1].to_owned(),
                topic_word.clone(),
            ];
            let beliefs = classes
                .iter()
                .map(|&c| {
                    let class = ClassToken::new(c)?;
                    let description = scale.by_class[c as usize].ok_or_else(|| {
                        Error::InvalidArgument(format!("scale has no belief for {class}"))
                    })?;
                    Ok(Belief::new(class, description))
                })
                .collect::<Result<Vec<_>>>()?;
            let belief_set = BeliefSet::new(beliefs)?;
            let target_dist = target_distribution(spec, id)?;
            let templates = belief_set
                .beliefs()
                .iter()
                .map(|b| {
                    (0..spec.styles)
                        .map(|s| response_template(&topic_word, b.class_token, s))
                        .collect()
                })
                .collect();
            Ok(Topic {
                id,
                question,
                belief_set,
                target_dist,
                templates,
            })
        })
        .collect()
}

fn target_distribution(spec: &TopicSpec, topic: usize) -> Result<BeliefDistribution> {
    match &spec.distribution {
        DistributionSource::Explicit { probs } => {
            BeliefDistribution::new(probs[topic % probs.len()].clone())
        }
        DistributionSource::Dirichlet { alpha } => {
            // Normalized independent Gamma(alpha, 1) draws.
            let mut rng = rng_for(spec.seed, &[STREAM_DISTRIBUTION, topic as u64]);
            let gamma = Gamma::new(*alpha, 1.0)
                .map_err(|e| Error::InvalidArgument(format!("Dirichlet alpha: {e}")))?;
            let draw: Vec<f64> = (0..spec.beliefs).map(|_| gamma.sample(&mut rng)).collect();
            BeliefDistribution::from_weights(&draw)
        }
    }
}

/// Response for `(topic, class, style)`: opener, topic word, two-word
/// stance, closer.
fn response_template(topic_word: &str, class: ClassToken, style: usize) -> Words {
    let [a, b] = STANCE[class.index()];
    vec![
        OPENERS[style].to_owned(),
        topic_word.to_owned(),
        a.to_owned(),
        b.to_owned(),
        CLOSERS[style].to_owned(),
    ]
}

/// Draws `n` preference pairs for one topic.
pub fn build_preference_pairs(topic: &Topic, n: usize, seed: u64) -> Result<Vec<PreferenceExample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let k = topic.num_beliefs();
    let styles = topic.num_styles();
    let accepted = WeightedIndex::new(topic.target_dist.probs())
        .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let mut rng = rng_for(seed, &[STREAM_PAIRS, topic.id as u64]);
    Ok((0..n)
        .map(|_| {
            let b_c = accepted.sample(&mut rng);
            let mut b_r = rng.random_range(0..k - 1);
            if b_r >= b_c {
                b_r += 1;
            }
            let s_c = rng.random_range(0..styles);
            let s_r = rng.random_range(0..styles);
            PreferenceExample {
                topic_id: topic.id,
                question: topic.question.clone(),
                belief_set: topic.belief_set.clone(),
                target_dist: topic.target_dist.clone(),
                accepted_belief: b_c,
                accepted_response: topic.templates[b_c][s_c].clone(),
                rejected_belief: b_r,
                rejected_response: topic.templates[b_r][s_r].clone(),
            }
        })
        .collect())
}

/// Builds one split for every topic, topic-major order.
pub fn build_split(
    topics: &[Topic],
    split: Split,
    per_topic: usize,
    seed: u64,
) -> Result<Vec<PreferenceExample>> {
    if per_topic == 0 {
        return Ok(Vec::new());
    }
    let split_seed = derive_seed(seed, &[split.tag()]);
    let mut out = Vec::with_capacity(topics.len() * per_topic);
    for topic in topics {
        out.extend(build_preference_pairs(topic, per_topic, split_seed)?);
    }
    Ok(out)
}

/// Topics plus the three splits described by a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub manifest: DatasetManifest,
    pub topics: Vec<Topic>,
    pub train: Vec<PreferenceExample>,
    pub eval: Vec<PreferenceExample>,
    pub test: Vec<PreferenceExample>,
}

impl GeneratedData {
    pub fn split(&self, split: Split) -> &[PreferenceExample] {
        match split {
            Split::Train => &self.train,
            Split::Eval => &self.eval,
            Split::Test => &self.test,
        }
    }
}

pub fn generate_dataset(manifest: &DatasetManifest) -> Result<GeneratedData> {
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    let topics = generate_topics(&manifest.spec)?;
    let seed = manifest.spec.seed;
    Ok(GeneratedData {
        train: build_split(&topics, Split::Train, manifest.splits.train, seed)?,
        eval: build_split(&topics, Split::Eval, manifest.splits.eval, seed)?,
        test: build_split(&topics, Split::Test, manifest.splits.test, seed)?,
        manifest: manifest.clone(),
        topics,
    })
}
