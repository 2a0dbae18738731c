//! Trainable autoregressive policies over the closed vocabulary.
//!
//! Two backends share one contract ([`SequenceModel`]): a tabular logit
//! table keyed by the truncated context, and a small causal self-attention
//! network. Everything above the backend (log-probabilities, belief
//! distributions, gradients, sampling) is written once against that
//! contract.

mod checkpoint;
mod neural;
mod tabular;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use neural::{NeuralConfig, NeuralModel};
pub use tabular::{TabularConfig, TabularModel};

use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefDistribution, BeliefSet, ClassToken};
use crate::datagen::Topic;
use crate::error::{Error, Result};
use crate::vocab::{concat, TokenId, Vocabulary};

/// Smallest belief-token mass that can be renormalized.
pub const MIN_BELIEF_MASS: f64 = 1e-12;

/// Backend contract: logits at chosen positions and their reverse-mode
/// gradient.
///
/// Position `p` means "the distribution of `tokens[p]` given `tokens[..p]`";
/// `p == tokens.len()` asks for the next token after the whole sequence.
pub trait SequenceModel {
    fn vocab_size(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn logits(&self, tokens: &[TokenId], positions: &[usize]) -> Vec<Vec<f64>>;
    /// Adds `sum_p dlogits[p] . d logits_p / d theta` into `grad`.
    fn backprop(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        dlogits: &[Vec<f64>],
        grad: &mut [f64],
    );
}

/// Backend selection plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Tabular(TabularConfig),
    Neural(NeuralConfig),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Tabular(TabularConfig::default())
    }
}

impl ModelConfig {
    pub fn context_length(&self) -> usize {
        match self {
            ModelConfig::Tabular(c) => c.context_length,
            ModelConfig::Neural(c) => c.context_length,
        }
    }

    pub fn backend_name(&self) -> &'static str {
        match self {
            ModelConfig::Tabular(_) => "tabular",
            ModelConfig::Neural(_) => "neural",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Tabular(TabularModel),
    Neural(NeuralModel),
}

impl Model {
    fn inner(&self) -> &dyn SequenceModel {
        match self {
            Model::Tabular(m) => m,
            Model::Neural(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn SequenceModel {
        match self {
            Model::Tabular(m) => m,
            Model::Neural(m) => m,
        }
    }
}

/// Flat gradient aligned with a policy's parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

impl Deref for GradientVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GradientVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// How [`Policy::sample`] picks each token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    Temperature(f64),
}

/// A sampled completion, split at the belief and response separators.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub class_token: Option<ClassToken>,
    pub description: Vec<TokenId>,
    pub response: Vec<TokenId>,
    /// Hit the length cap before `<eos>`.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    vocab: Arc<Vocabulary>,
    model: Model,
    context_length: usize,
}

impl Policy {
    pub fn new(vocab: Arc<Vocabulary>, model: Model, context_length: usize) -> Result<Self> {
        let vsize = match &model {
            Model::Tabular(m) => m.vocab_size(),
            Model::Neural(m) => m.vocab_size(),
        };
        if vsize != vocab.len() {
            return Err(Error::InvalidArgument(format!(
                "model vocabulary size {vsize} differs from vocabulary ({})",
                vocab.len()
            )));
        }
        if let Model::Neural(m) = &model {
            if m.config().context_length != context_length {
                return Err(Error::InvalidArgument(
                    "neural position table does not match context length".into(),
                ));
            }
        }
        Ok(Self {
            vocab,
            model,
            context_length,
        })
    }

    /// Initial policy for `topics`. The tabular backend registers every
    /// truncated context reachable from the topics' templates.
    pub fn for_topics(
        vocab: Arc<Vocabulary>,
        config: &ModelConfig,
        topics: &[Topic],
    ) -> Result<Self> {
        let model = match config {
            ModelConfig::Tabular(c) => {
                let support = support_sequences(&vocab, topics)?;
                Model::Tabular(TabularModel::new(vocab.len(), c, &support)?)
            }
            ModelConfig::Neural(c) => Model::Neural(NeuralModel::new(vocab.len(), c)?),
        };
        Self::new(vocab, model, config.context_length())
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn context_length(&self) -> usize {
        self.context_length
    }

    pub fn backend_name(&self) -> &'static str {
        match self.model {
            Model::Tabular(_) => "tabular",
            Model::Neural(_) => "neural",
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    pub fn params(&self) -> &[f64] {
        self.model.inner().params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.model.inner_mut().params_mut()
    }

    /// Overwrites every parameter with an independent `N(0, std^2)` draw.
    pub fn randomize(&mut self, std: f64, seed: u64) {
        let dist = rand_distr::Normal::new(0.0, std).expect("finite std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in self.params_mut() {
            *x = rand_distr::Distribution::sample(&dist, &mut rng);
        }
    }

    /// Snapshot that can be read but never updated.
    pub fn freeze(&self) -> ReferencePolicy {
        ReferencePolicy(self.clone())
    }

    fn check(&self, ctx: &[TokenId], cont: &[TokenId]) -> Result<()> {
        let len = ctx.len() + cont.len();
        if len > self.context_length {
            return Err(Error::LengthOverflow {
                len,
                max: self.context_length,
            });
        }
        if ctx.is_empty() {
            return Err(Error::InvalidArgument("context must not be empty".into()));
        }
        let v = self.vocab.len() as TokenId;
        if let Some(t) = ctx.iter().chain(cont).find(|&&t| t >= v) {
            return Err(Error::OutOfVocabulary(format!("id {t}")));
        }
        Ok(())
    }

    /// Exact `log p(cont | ctx)`.
    pub fn log_prob(&self, ctx: &[TokenId], cont: &[TokenId]) -> Result<f64> {
        self.check(ctx, cont)?;
        if cont.is_empty() {
            return Ok(0.0);
        }
        let seq = concat(ctx, cont);
        let positions: Vec<usize> = (ctx.len()..seq.len()).collect();
        let logits = self.model.inner().logits(&seq, &positions);
        Ok(positions
            .iter()
            .zip(&logits)
            .map(|(&p, l)| log_softmax_at(l, seq[p] as usize))
            .sum())
    }

    /// Adds `scale * grad log p(cont | ctx)` into `grad` and returns the
    /// log-probability.
    pub fn accumulate_log_prob_grad(
        &self,
        ctx: &[TokenId],
        cont: &[TokenId],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check(ctx, cont)?;
        if cont.is_empty() {
            return Ok(0.0);
        }
        let seq = concat(ctx, cont);
        let positions: Vec<usize> = (ctx.len()..seq.len()).collect();
        let model = self.model.inner();
        let logits = model.logits(&seq, &positions);
        let mut total = 0.0;
        let dlogits: Vec<Vec<f64>> = positions
            .iter()
            .zip(&logits)
            .map(|(&p, l)| {
                let target = seq[p] as usize;
                let probs = softmax(l);
                total += log_softmax_at(l, target);
                probs
                    .iter()
                    .enumerate()
                    .map(|(j, &pj)| scale * (if j == target { 1.0 } else { 0.0 } - pj))
                    .collect()
            })
            .collect();
        if scale != 0.0 {
            model.backprop(&seq, &positions, &dlogits, grad);
        }
        Ok(total)
    }

    pub fn grad_log_prob(&self, ctx: &[TokenId], cont: &[TokenId]) -> Result<GradientVector> {
        let mut g = GradientVector::zeros(self.num_params());
        self.accumulate_log_prob_grad(ctx, cont, 1.0, &mut g)?;
        Ok(g)
    }

    /// Full next-token distribution after `prefix`.
    pub fn next_token_distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.check(prefix, &[])?;
        if prefix.len() >= self.context_length {
            return Err(Error::LengthOverflow {
                len: prefix.len() + 1,
                max: self.context_length,
            });
        }
        let logits = self.model.inner().logits(prefix, &[prefix.len()]);
        Ok(softmax(&logits[0]))
    }

    fn belief_logits(&self, query: &[TokenId], classes: &[TokenId]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(query, classes.get(..1).unwrap_or(&[]))?;
        if let Some(&c) = classes.iter().find(|&&c| Vocabulary::class_of(c).is_none()) {
            return Err(Error::InvalidArgument(format!("token {c} is not a class token")));
        }
        let full = self.model.inner().logits(query, &[query.len()]).remove(0);
        let restricted: Vec<f64> = classes.iter().map(|&c| full[c as usize]).collect();
        Ok((full, restricted))
    }

    /// Belief-token probabilities at the first post-query position,
    /// restricted to `classes` and renormalized.
    pub fn belief_probs(&self, query: &[TokenId], classes: &[TokenId]) -> Result<Vec<f64>> {
        let (full, restricted) = self.belief_logits(query, classes)?;
        let mass = (log_sum_exp(&restricted) - log_sum_exp(&full)).exp();
        if !(mass >= MIN_BELIEF_MASS) {
            return Err(Error::NoBeliefMass(mass));
        }
        Ok(softmax(&restricted))
    }

    pub fn belief_distribution(
        &self,
        query: &[TokenId],
        belief_set: &BeliefSet,
    ) -> Result<BeliefDistribution> {
        let classes: Vec<TokenId> = belief_set
            .class_tokens()
            .into_iter()
            .map(Vocabulary::class_id)
            .collect();
        BeliefDistribution::new(self.belief_probs(query, &classes)?)
    }

    /// Backpropagates `scale * dF/dq` through the renormalized belief
    /// distribution `q` into `grad`.
    pub fn accumulate_belief_grad(
        &self,
        query: &[TokenId],
        classes: &[TokenId],
        d_probs: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        if d_probs.len() != classes.len() {
            return Err(Error::LengthMismatch {
                left: d_probs.len(),
                right: classes.len(),
            });
        }
        let q = self.belief_probs(query, classes)?;
        if scale == 0.0 {
            return Ok(());
        }
        let mean: f64 = q.iter().zip(d_probs).map(|(a, b)| a * b).sum();
        let mut dlogits = vec![0.0; self.vocab.len()];
        for ((&c, &qi), &gi) in classes.iter().zip(&q).zip(d_probs) {
            dlogits[c as usize] += scale * qi * (gi - mean);
        }
        self.model
            .inner()
            .backprop(query, &[query.len()], &[dlogits], grad);
        Ok(())
    }

    /// Autoregressive sampling after `query` until `<eos>` or the context
    /// length is reached.
    pub fn sample(&self, query: &[TokenId], decoding: Decoding, seed: u64) -> Result<Generation> {
        if let Decoding::Temperature(t) = decoding {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("temperature must be > 0, got {t}")));
            }
        }
        self.check(query, &[])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seq = query.to_vec();
        let mut truncated = true;
        while seq.len() < self.context_length {
            let logits = self.model.inner().logits(&seq, &[seq.len()]).remove(0);
            let next = match decoding {
                Decoding::Greedy => argmax(&logits),
                Decoding::Temperature(t) => {
                    let scaled: Vec<f64> = logits.iter().map(|l| l / t).collect();
                    draw(&softmax(&scaled), rng.random::<f64>())
                }
            } as TokenId;
            seq.push(next);
            if next == Vocabulary::EOS {
                truncated = false;
                break;
            }
        }
        Ok(segment(seq[query.len()..].to_vec(), truncated))
    }
}

/// Splits generated tokens into class token, description and response.
pub fn segment(tokens: Vec<TokenId>, truncated: bool) -> Generation {
    let mut rest = tokens.as_slice();
    let class_token = rest.first().and_then(|&t| Vocabulary::class_of(t));
    if class_token.is_some() {
        rest = &rest[1..];
    }
    let (description, response) = match rest.iter().position(|&t| t == Vocabulary::SEP) {
        Some(i) => (rest[..i].to_vec(), rest[i + 1..].to_vec()),
        None => (rest.to_vec(), Vec::new()),
    };
    let response = match response.iter().position(|&t| t == Vocabulary::EOS) {
        Some(i) => response[..i].to_vec(),
        None => response,
    };
    let description = match description.iter().position(|&t| t == Vocabulary::EOS) {
        Some(i) => description[..i].to_vec(),
        None => description,
    };
    Generation {
        tokens,
        class_token,
        description,
        response,
        truncated,
    }
}

/// Read-only snapshot used as the reference policy during alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy(Policy);

impl ReferencePolicy {
    pub fn policy(&self) -> &Policy {
        &self.0
    }
}

impl Deref for ReferencePolicy {
    type Target = Policy;
    fn deref(&self) -> &Policy {
        &self.0
    }
}

/// Sequences whose truncated contexts the tabular backend registers:
/// the query followed by every belief segment and, after each belief
/// segment, every response template of the topic.
pub fn support_sequences(vocab: &Vocabulary, topics: &[Topic]) -> Result<Vec<Vec<TokenId>>> {
    let mut out = Vec::new();
    for topic in topics {
        let query = vocab.query(&topic.question)?;
        for belief in topic.belief_set.beliefs() {
            let prefix = concat(&query, &vocab.belief_segment(belief)?);
            for styles in &topic.templates {
                for tpl in styles {
                    out.push(concat(&prefix, &vocab.response_segment(tpl)?));
                }
            }
        }
    }
    Ok(out)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    logits[index] - log_sum_exp(logits)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw with `u` in `[0, 1)`.
fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the accumulated mass: take the last token with
    // positive probability.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
