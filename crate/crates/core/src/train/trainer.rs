//! Mini-batch training loops and periodic evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{split_by_belief_share, Optimizer, SubsetSplit, TraceRecord, TrainConfig, TrainingTrace};
use crate::align::{
    calibration_loss_into, dpo_loss_into, gdpo_loss_into, kto_gdpo_loss_into, kto_items,
    margin_with, sft_loss_into, AlignConfig, KtoReference, LossValue, Method, ReferencePair,
};
use crate::belief::{js_distance, reference_baselines, BeliefDistribution};
use crate::datagen::{rng_for, PreferenceExample, Topic};
use crate::error::{Error, Result};
use crate::evalkit::avg_jsd;
use crate::policy::{Policy, ReferencePolicy};
use crate::vocab::{encode_all, EncodedExample};

const STREAM_SHUFFLE: u64 = 0x5348_5546;
const STREAM_UNIFORM: u64 = 0x554e_4946;

/// Final policy, best policy by eval JSD, and the trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub best: Policy,
    pub best_step: usize,
    pub trace: TrainingTrace,
}

/// Context, chosen and rejected completions of the margin a method reports.
fn margin_context(method: Method, ex: &EncodedExample) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    if method.belief_conditioned() {
        (
            ex.belief_conditioned_query(),
            ex.accepted_response.clone(),
            ex.rejected_response.clone(),
        )
    } else {
        (ex.query.clone(), ex.chosen_completion(), ex.rejected_completion())
    }
}

fn reference_pairs(
    reference: &ReferencePolicy,
    method: Method,
    examples: &[EncodedExample],
) -> Result<Vec<ReferencePair>> {
    examples
        .iter()
        .map(|ex| {
            let (x, c, r) = margin_context(method, ex);
            ReferencePair::new(reference, &x, &c, &r)
        })
        .collect()
}

/// Loss of one mini-batch, mean over examples, with `scale` folded into the
/// accumulated gradient. `refs` is indexed like `batch`.
fn batch_loss(
    policy: &Policy,
    reference: &ReferencePolicy,
    batch: &[&EncodedExample],
    refs: &[&ReferencePair],
    config: &AlignConfig,
    scale: f64,
    grad: &mut [f64],
) -> Result<LossValue> {
    let n = batch.len() as f64;
    let s = scale / n;
    let mut total = LossValue::default();
    match config.method {
        Method::Sft => {
            for ex in batch {
                total.add_scaled(&sft_loss_into(policy, ex, s, grad)?, 1.0 / n);
            }
        }
        Method::Dpo => {
            for (ex, r) in batch.iter().zip(refs) {
                let v = dpo_loss_into(
                    policy,
                    r,
                    &ex.query,
                    &ex.chosen_completion(),
                    &ex.rejected_completion(),
                    config.beta,
                    s,
                    grad,
                )?;
                total.add_scaled(&v, 1.0 / n);
            }
        }
        Method::Gdpo => {
            for (ex, r) in batch.iter().zip(refs) {
                total.add_scaled(&gdpo_loss_into(policy, r, ex, config, s, grad)?, 1.0 / n);
            }
        }
        Method::KtoGdpo => {
            if config.terms != crate::align::GdpoTerms::PreferenceOnly {
                for ex in batch {
                    let v = calibration_loss_into(
                        policy,
                        &ex.query,
                        &ex.belief_classes,
                        &ex.target,
                        &ex.accepted_belief_segment,
                        config.nll_scope,
                        config.calibration_weight,
                        s,
                        grad,
                    )?;
                    total.add_scaled(&v, 1.0 / n);
                }
            }
            if config.terms != crate::align::GdpoTerms::CalibrationOnly {
                let owned: Vec<EncodedExample> = batch.iter().map(|e| (*e).clone()).collect();
                let items = kto_items(&owned);
                let kref = KtoReference::new(reference, &items)?;
                let v = kto_gdpo_loss_into(policy, &kref, &items, config, scale, grad)?;
                total.add_scaled(&v, 1.0);
            }
        }
    }
    Ok(total)
}

/// Everything needed to produce a trace record on a fixed eval set.
struct Evaluator<'a> {
    eval: &'a [EncodedExample],
    subsets: SubsetSplit,
    refs: Vec<ReferencePair>,
    baselines: [f64; 4],
    reference: &'a ReferencePolicy,
    config: &'a TrainConfig,
}

impl<'a> Evaluator<'a> {
    fn new(
        eval: &'a [EncodedExample],
        reference: &'a ReferencePolicy,
        config: &'a TrainConfig,
    ) -> Result<Self> {
        let mut per_topic: BTreeMap<usize, &EncodedExample> = BTreeMap::new();
        for ex in eval {
            per_topic.entry(ex.topic_id).or_insert(ex);
        }
        let mut baselines = [0.0; 4];
        for ex in per_topic.values() {
            let p = BeliefDistribution::new(ex.target.clone())?;
            let b = reference_baselines(&p, config.noise_level)?;
            for (acc, d) in baselines.iter_mut().zip(b.as_array()) {
                *acc += js_distance(d, &p)?;
            }
        }
        for acc in &mut baselines {
            *acc /= per_topic.len().max(1) as f64;
        }
        Ok(Self {
            eval,
            subsets: split_by_belief_share(eval),
            refs: reference_pairs(reference, config.align.method, eval)?,
            baselines,
            reference,
            config,
        })
    }

    fn subset_margin(&self, policy: &Policy, idx: &[usize]) -> Result<f64> {
        if idx.is_empty() {
            return Ok(f64::NAN);
        }
        let method = self.config.align.method;
        let mut sum = 0.0;
        for &i in idx {
            let (x, c, r) = margin_context(method, &self.eval[i]);
            sum += margin_with(policy, &self.refs[i], &x, &c, &r, self.config.align.beta)?;
        }
        Ok(sum / idx.len() as f64)
    }

    fn record(&self, policy: &Policy, step: usize) -> Result<TraceRecord> {
        let mut losses = LossValue::default();
        let bs = self.config.batch_size;
        let examples: Vec<&EncodedExample> = self.eval.iter().collect();
        let refs: Vec<&ReferencePair> = self.refs.iter().collect();
        let mut scratch = [0.0; 0];
        for (batch, r) in examples.chunks(bs).zip(refs.chunks(bs)) {
            let v = batch_loss(
                policy,
                self.reference,
                batch,
                r,
                &self.config.align,
                0.0,
                &mut scratch,
            )?;
            losses.add_scaled(&v, batch.len() as f64 / self.eval.len() as f64);
        }
        Ok(TraceRecord {
            step,
            avg_jsd: avg_jsd(policy, self.eval)?,
            jsd_majority_baseline: self.baselines[0],
            jsd_reverse_baseline: self.baselines[1],
            jsd_uniform_baseline: self.baselines[2],
            jsd_noise_baseline: self.baselines[3],
            margin_majority: self.subset_margin(policy, &self.subsets.majority)?,
            margin_minority: self.subset_margin(policy, &self.subsets.minority)?,
            margin_other: self.subset_margin(policy, &self.subsets.other)?,
            loss_total: losses.loss,
            loss_kl: losses.diagnostics.kl_term,
            loss_pref: losses.diagnostics.pref_term,
            loss_nll: losses.diagnostics.belief_nll,
        })
    }
}

fn train_loop(
    mut policy: Policy,
    reference: &ReferencePolicy,
    train: &[EncodedExample],
    eval: &[EncodedExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let eval = if eval.is_empty() { train } else { eval };
    let method = config.align.method;
    let evaluator = Evaluator::new(eval, reference, config)?;
    let train_refs = match method {
        Method::Dpo | Method::Gdpo => reference_pairs(reference, method, train)?,
        Method::Sft | Method::KtoGdpo => Vec::new(),
    };
    let placeholder = ReferencePair {
        chosen: 0.0,
        rejected: 0.0,
    };

    let mut trace = TrainingTrace::default();
    let first = evaluator.record(&policy, 0)?;
    let mut best = (first.avg_jsd, 0, policy.clone());
    trace.push(first);

    let mut opt = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        config.warmup_steps,
        policy.num_params(),
    );
    let mut grad = vec![0.0; policy.num_params()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut rng = rng_for(config.seed, &[STREAM_SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &train[i]).collect();
            let refs: Vec<&ReferencePair> = chunk
                .iter()
                .map(|&i| train_refs.get(i).unwrap_or(&placeholder))
                .collect();
            let divergence = |detail: String| Error::Divergence { step, detail };
            let v = batch_loss(&policy, reference, &batch, &refs, &config.align, 1.0, &mut grad)
                .map_err(|e| match e {
                    Error::NonFinite(what) => divergence(format!("non-finite {what}")),
                    other => other,
                })?;
            if !v.loss.is_finite() {
                return Err(divergence(format!("loss is {}", v.loss)));
            }
            opt.step(policy.params_mut(), &grad)
                .map_err(|e| divergence(e.to_string()))?;
            if policy.params().iter().any(|x| !x.is_finite()) {
                return Err(divergence("non-finite parameters".into()));
            }
            if step % config.eval_every == 0 {
                let r = evaluator.record(&policy, step)?;
                if r.avg_jsd < best.0 {
                    best = (r.avg_jsd, step, policy.clone());
                }
                trace.push(r);
            }
        }
    }
    if trace.last().is_some_and(|r| r.step != step) {
        let r = evaluator.record(&policy, step)?;
        if r.avg_jsd < best.0 {
            best = (r.avg_jsd, step, policy.clone());
        }
        trace.push(r);
    }
    Ok(TrainOutcome {
        policy,
        best: best.2,
        best_step: best.1,
        trace,
    })
}

/// Supervised fine-tuning on the accepted completions. Trace margins are
/// measured against the initial policy.
pub fn run_sft(
    initial: Policy,
    train: &[EncodedExample],
    eval: &[EncodedExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut config = config.clone();
    config.align.method = Method::Sft;
    let reference = initial.freeze();
    train_loop(initial, &reference, train, eval, &config)
}

/// Redraws every accepted belief (and its response) uniformly over the
/// topic's beliefs; the rejected side is redrawn uniformly from the rest.
pub fn uniform_resample(
    examples: &[PreferenceExample],
    topics: &[Topic],
    seed: u64,
) -> Result<Vec<PreferenceExample>> {
    let mut rng = rng_for(seed, &[STREAM_UNIFORM]);
    examples
        .iter()
        .map(|ex| {
            let topic = topics
                .get(ex.topic_id)
                .ok_or(Error::UnknownTopic(ex.topic_id))?;
            let k = topic.num_beliefs();
            let styles = topic.num_styles();
            let b_c = rng.random_range(0..k);
            let mut b_r = rng.random_range(0..k - 1);
            if b_r >= b_c {
                b_r += 1;
            }
            let s_c = rng.random_range(0..styles);
            let s_r = rng.random_range(0..styles);
            Ok(PreferenceExample {
                accepted_belief: b_c,
                accepted_response: topic.templates[b_c][s_c].clone(),
                rejected_belief: b_r,
                rejected_response: topic.templates[b_r][s_r].clone(),
                ..ex.clone()
            })
        })
        .collect()
}

/// SFT after [`uniform_resample`] of the training set, seeded by the
/// config seed.
pub fn run_uniform_sft(
    initial: Policy,
    train: &[PreferenceExample],
    topics: &[Topic],
    eval: &[EncodedExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let resampled = uniform_resample(train, topics, config.seed)?;
    let encoded = encode_all(initial.vocab(), &resampled)?;
    run_sft(initial, &encoded, eval, config)
}

/// Alignment from a fine-tuned policy, which also becomes the frozen
/// reference.
pub fn run_alignment(
    sft: &Policy,
    train: &[EncodedExample],
    eval: &[EncodedExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if config.align.method == Method::Sft {
        return Err(Error::InvalidArgument(
            "alignment needs dpo, gdpo or kto-gdpo".into(),
        ));
    }
    let reference = sft.freeze();
    train_loop(sft.clone(), &reference, train, eval, config)
}
