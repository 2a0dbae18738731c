//! Evaluation metrics over policies and generation logs.
//!
//! * JSD: belief-distribution distance to the target, per topic.
//! * CBC: generated class token agrees with the generated description.
//! * BPC: generated response is a template of the generated belief.
//! * RS: term-frequency cosine between the response and the belief's
//!   first-style template.

mod report;

pub use report::{
    emit_report, plot_data, read_metrics_csv, write_metrics_csv, MethodMetrics, PlotData,
    PlotSeries, ReportFiles, METRICS_COLUMNS,
};

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::{js_distance_raw, ClassToken};
use crate::datagen::{derive_seed, map_belief_to_class, ClassBeliefMap, Topic};
use crate::error::{Error, Result};
use crate::policy::{Decoding, Policy};
use crate::vocab::EncodedExample;

/// Fraction of best-template fragments a response must share to count as
/// a match outside the template set.
pub const FRAGMENT_THRESHOLD: f64 = 0.8;

/// Mean Jensen-Shannon distance between the policy's belief distribution
/// and the target, one term per distinct topic.
pub fn avg_jsd(policy: &Policy, examples: &[EncodedExample]) -> Result<f64> {
    let mut per_topic: BTreeMap<usize, &EncodedExample> = BTreeMap::new();
    for ex in examples {
        per_topic.entry(ex.topic_id).or_insert(ex);
    }
    if per_topic.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut sum = 0.0;
    for ex in per_topic.values() {
        let q = policy.belief_probs(&ex.query, &ex.belief_classes)?;
        sum += js_distance_raw(&q, &ex.target)?;
    }
    Ok(sum / per_topic.len() as f64)
}

/// One sampled answer to a test query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRecord {
    pub topic_id: usize,
    pub query: Vec<String>,
    /// Predicted class token, absent when the first token was not one.
    pub class_token: Option<ClassToken>,
    pub description: Vec<String>,
    pub response: Vec<String>,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerationLog {
    pub records: Vec<GenerationRecord>,
}

impl GenerationLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("records serialize");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { records })
    }
}

/// Samples one answer per example; example `i` uses seed
/// `derive_seed(seed, [i])`.
pub fn generate_log(
    policy: &Policy,
    examples: &[EncodedExample],
    decoding: Decoding,
    seed: u64,
) -> Result<GenerationLog> {
    let vocab = policy.vocab();
    let records = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let g = policy.sample(&ex.query, decoding, derive_seed(seed, &[i as u64]))?;
            Ok(GenerationRecord {
                topic_id: ex.topic_id,
                query: vocab.decode(&ex.query[1..]),
                class_token: g.class_token,
                description: vocab.decode(&g.description),
                response: vocab.decode(&g.response),
                truncated: g.truncated,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GenerationLog { records })
}

fn nonempty(log: &GenerationLog) -> Result<()> {
    if log.is_empty() {
        return Err(Error::InvalidArgument("generation log is empty".into()));
    }
    Ok(())
}

/// Class-belief consistency: share of records whose description maps to
/// the predicted class token. Unmapped or empty descriptions count as
/// inconsistent.
pub fn cbc(log: &GenerationLog, map: &ClassBeliefMap) -> Result<f64> {
    nonempty(log)?;
    let hits = log
        .records
        .iter()
        .filter(|r| {
            r.class_token.is_some()
                && map_belief_to_class(&r.description, map).ok() == r.class_token
        })
        .count();
    Ok(hits as f64 / log.len() as f64)
}

fn topic_of(topics: &[Topic], id: usize) -> Result<&Topic> {
    topics
        .iter()
        .find(|t| t.id == id)
        .ok_or(Error::UnknownTopic(id))
}

fn predicted_belief(topic: &Topic, r: &GenerationRecord) -> Option<usize> {
    topic.belief_set.index_of_class(r.class_token?)
}

/// Length of the longest common subsequence of two word sequences.
fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Best fragment overlap of `response` with any template of `belief`.
fn fragment_score(topic: &Topic, belief: usize, response: &[String]) -> f64 {
    topic.templates[belief]
        .iter()
        .map(|t| lcs(response, t) as f64 / response.len().max(t.len()).max(1) as f64)
        .fold(0.0, f64::max)
}

/// Whether `response` belongs to the template family of `belief`.
pub fn matches_belief(topic: &Topic, belief: usize, response: &[String]) -> bool {
    if let Some((b, _)) = topic.find_template(response) {
        return b == belief;
    }
    let own = fragment_score(topic, belief, response);
    own >= FRAGMENT_THRESHOLD
        && (0..topic.num_beliefs())
            .filter(|&j| j != belief)
            .all(|j| fragment_score(topic, j, response) < own)
}

/// Belief-preference consistency judged against the template families.
pub fn bpc_oracle(log: &GenerationLog, topics: &[Topic]) -> Result<f64> {
    nonempty(log)?;
    let mut hits = 0usize;
    for r in &log.records {
        let topic = topic_of(topics, r.topic_id)?;
        if predicted_belief(topic, r).is_some_and(|b| matches_belief(topic, b, &r.response)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / log.len() as f64)
}

/// Cosine similarity of term-frequency vectors.
pub fn tf_cosine(a: &[String], b: &[String]) -> f64 {
    fn tf(words: &[String]) -> HashMap<&str, f64> {
        let mut m = HashMap::new();
        for w in words {
            *m.entry(w.as_str()).or_insert(0.0) += 1.0;
        }
        m
    }
    let (ta, tb) = (tf(a), tf(b));
    let dot: f64 = ta.iter().map(|(w, x)| x * tb.get(w).copied().unwrap_or(0.0)).sum();
    let na: f64 = ta.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = tb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// Response similarity: mean TF cosine against the predicted belief's
/// first-style template; 0 when the class is not in the topic's set.
pub fn rs(log: &GenerationLog, topics: &[Topic]) -> Result<f64> {
    nonempty(log)?;
    let mut sum = 0.0;
    for r in &log.records {
        let topic = topic_of(topics, r.topic_id)?;
        if let Some(b) = predicted_belief(topic, r) {
            sum += tf_cosine(&r.response, &topic.templates[b][0]);
        }
    }
    Ok(sum / log.len() as f64)
}

/// The four headline metrics on one test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub jsd: f64,
    pub cbc: f64,
    pub bpc: f64,
    pub rs: f64,
    pub n: usize,
}

/// Runs generation on `test` and scores it.
pub fn evaluate(
    policy: &Policy,
    test: &[EncodedExample],
    topics: &[Topic],
    map: &ClassBeliefMap,
    decoding: Decoding,
    seed: u64,
) -> Result<(MetricReport, GenerationLog)> {
    let log = generate_log(policy, test, decoding, seed)?;
    let report = MetricReport {
        jsd: avg_jsd(policy, test)?,
        cbc: cbc(&log, map)?,
        bpc: bpc_oracle(&log, topics)?,
        rs: rs(&log, topics)?,
        n: log.len(),
    };
    Ok((report, log))
}
