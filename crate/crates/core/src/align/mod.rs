//! Training objectives: supervised NLL, DPO, the two GDPO terms and the
//! KTO-style belief-conditioned variant.
//!
//! Every public loss returns a [`LossReport`] with an exact gradient. The
//! `*_into` functions underneath accumulate a scaled gradient into a caller
//! buffer so the trainer can sum a batch without allocating per example.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::belief::{floor_on_support, kl_divergence_raw, DivergenceConfig};
use crate::error::{Error, Result};
use crate::policy::{GradientVector, Policy, ReferencePolicy};
use crate::vocab::{concat, EncodedExample, TokenId};

pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sft,
    Dpo,
    Gdpo,
    KtoGdpo,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sft, Method::Dpo, Method::Gdpo, Method::KtoGdpo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sft => "sft",
            Method::Dpo => "dpo",
            Method::Gdpo => "gdpo",
            Method::KtoGdpo => "kto-gdpo",
        }
    }

    /// Whether the method conditions its preference term on the accepted
    /// belief.
    pub fn belief_conditioned(self) -> bool {
        matches!(self, Method::Gdpo | Method::KtoGdpo)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Which tokens of the belief segment the calibration NLL covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NllScope {
    /// Class token, description and separator.
    #[default]
    ClassAndDescription,
    ClassOnly,
}

/// GDPO term selection, used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GdpoTerms {
    #[default]
    Both,
    CalibrationOnly,
    PreferenceOnly,
}

impl GdpoTerms {
    fn calibration(self) -> bool {
        self != GdpoTerms::PreferenceOnly
    }

    fn preference(self) -> bool {
        self != GdpoTerms::CalibrationOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub beta: f64,
    pub method: Method,
    pub lambda_desirable: f64,
    pub lambda_undesirable: f64,
    /// Multiplier on the KL part of the calibration term.
    pub calibration_weight: f64,
    pub nll_scope: NllScope,
    pub terms: GdpoTerms,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            method: Method::Gdpo,
            lambda_desirable: 1.0,
            lambda_undesirable: 1.0,
            calibration_weight: 1.0,
            nll_scope: NllScope::default(),
            terms: GdpoTerms::default(),
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.lambda_desirable > 0.0 && self.lambda_undesirable > 0.0) {
            return Err(Error::InvalidArgument("KTO weights must be > 0".into()));
        }
        if !(self.calibration_weight >= 0.0 && self.calibration_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "calibration_weight must be >= 0, got {}",
                self.calibration_weight
            )));
        }
        Ok(())
    }
}

/// Scalar terms that make up a loss. Terms a loss does not have are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub reward_margin: f64,
    /// Unweighted `KL(p* || p_theta(b0|x))`.
    pub kl_term: f64,
    pub belief_nll: f64,
    pub pref_term: f64,
}

impl Diagnostics {
    fn add_scaled(&mut self, other: &Diagnostics, s: f64) {
        self.reward_margin += s * other.reward_margin;
        self.kl_term += s * other.kl_term;
        self.belief_nll += s * other.belief_nll;
        self.pref_term += s * other.pref_term;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub grad: GradientVector,
    pub diagnostics: Diagnostics,
}

/// Loss value and diagnostics without the gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub diagnostics: Diagnostics,
}

impl LossValue {
    pub fn add_scaled(&mut self, other: &LossValue, s: f64) {
        self.loss += s * other.loss;
        self.diagnostics.add_scaled(&other.diagnostics, s);
    }
}

fn report(policy: &Policy, f: impl FnOnce(&mut [f64]) -> Result<LossValue>) -> Result<LossReport> {
    let mut grad = GradientVector::zeros(policy.num_params());
    let v = f(&mut grad)?;
    if !v.loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(LossReport {
        loss: v.loss,
        grad,
        diagnostics: v.diagnostics,
    })
}

/// `-log sigmoid(m)` without overflow.
pub fn neg_log_sigmoid(m: f64) -> f64 {
    (-m).max(0.0) + (-m.abs()).exp().ln_1p()
}

pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Mean token NLL of the accepted completion (belief segment and response)
/// given the query.
pub fn sft_loss(policy: &Policy, ex: &EncodedExample) -> Result<LossReport> {
    report(policy, |g| sft_loss_into(policy, ex, 1.0, g))
}

pub fn sft_loss_into(
    policy: &Policy,
    ex: &EncodedExample,
    scale: f64,
    grad: &mut [f64],
) -> Result<LossValue> {
    let target = ex.chosen_completion();
    let n = target.len() as f64;
    let lp = policy.accumulate_log_prob_grad(&ex.query, &target, -scale / n, grad)?;
    let loss = -lp / n;
    Ok(LossValue {
        loss,
        diagnostics: Diagnostics {
            belief_nll: loss,
            ..Default::default()
        },
    })
}

/// Reference log-probabilities of a chosen/rejected pair; constant during
/// alignment, so the trainer computes them once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePair {
    pub chosen: f64,
    pub rejected: f64,
}

impl ReferencePair {
    pub fn new(
        reference: &ReferencePolicy,
        ctx: &[TokenId],
        chosen: &[TokenId],
        rejected: &[TokenId],
    ) -> Result<Self> {
        Ok(Self {
            chosen: reference.log_prob(ctx, chosen)?,
            rejected: reference.log_prob(ctx, rejected)?,
        })
    }
}

/// `beta * ((log pi(y_c|x) - log ref(y_c|x)) - (log pi(y_r|x) - log ref(y_r|x)))`.
pub fn reward_margin(
    policy: &Policy,
    reference: &ReferencePolicy,
    x: &[TokenId],
    y_c: &[TokenId],
    y_r: &[TokenId],
    beta: f64,
) -> Result<f64> {
    let r = ReferencePair::new(reference, x, y_c, y_r)?;
    margin_with(policy, &r, x, y_c, y_r, beta)
}

pub fn margin_with(
    policy: &Policy,
    r: &ReferencePair,
    x: &[TokenId],
    y_c: &[TokenId],
    y_r: &[TokenId],
    beta: f64,
) -> Result<f64> {
    let dc = policy.log_prob(x, y_c)? - r.chosen;
    let dr = policy.log_prob(x, y_r)? - r.rejected;
    let m = beta * (dc - dr);
    if !m.is_finite() {
        return Err(Error::NonFinite("log-ratio"));
    }
    Ok(m)
}

pub fn dpo_loss(
    policy: &Policy,
    reference: &ReferencePolicy,
    x: &[TokenId],
    y_c: &[TokenId],
    y_r: &[TokenId],
    beta: f64,
) -> Result<LossReport> {
    if y_c == y_r {
        return Err(Error::InvalidArgument(
            "chosen and rejected completions are identical".into(),
        ));
    }
    let r = ReferencePair::new(reference, x, y_c, y_r)?;
    report(policy, |g| dpo_loss_into(policy, &r, x, y_c, y_r, beta, 1.0, g))
}

/// DPO loss with precomputed reference log-probabilities.
#[allow(clippy::too_many_arguments)]
pub fn dpo_loss_into(
    policy: &Policy,
    r: &ReferencePair,
    x: &[TokenId],
    y_c: &[TokenId],
    y_r: &[TokenId],
    beta: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<LossValue> {
    let m = margin_with(policy, r, x, y_c, y_r, beta)?;
    let loss = neg_log_sigmoid(m);
    // dL/dm = -sigmoid(-m)
    let w = scale * beta * sigmoid(-m);
    policy.accumulate_log_prob_grad(x, y_c, -w, grad)?;
    policy.accumulate_log_prob_grad(x, y_r, w, grad)?;
    Ok(LossValue {
        loss,
        diagnostics: Diagnostics {
            reward_margin: m,
            pref_term: loss,
            ..Default::default()
        },
    })
}

/// DPO with both completions conditioned on `x + b_c`.
pub fn belief_conditioned_pref_loss(
    policy: &Policy,
    reference: &ReferencePolicy,
    x: &[TokenId],
    belief_segment: &[TokenId],
    y_c: &[TokenId],
    y_r: &[TokenId],
    beta: f64,
) -> Result<LossReport> {
    dpo_loss(policy, reference, &concat(x, belief_segment), y_c, y_r, beta)
}

/// Gradient of `KL(p || floor(q))` with respect to `q`.
pub fn kl_grad_wrt_q(p: &[f64], q: &[f64], floor: f64) -> Vec<f64> {
    let floored = floor_on_support(p, q, floor);
    let active = floored.as_slice() != q;
    let raw: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { qi.max(floor) } else { qi })
        .collect();
    let total: f64 = if active { raw.iter().sum() } else { 1.0 };
    p.iter()
        .zip(q)
        .zip(&raw)
        .map(|((&pi, &qi), &ui)| {
            let passes = pi == 0.0 || !active || qi >= floor;
            let log_term = if pi > 0.0 && passes { -pi / ui } else { 0.0 };
            let norm_term = if active && passes { 1.0 / total } else { 0.0 };
            log_term + norm_term
        })
        .collect()
}

/// `KL(p* || p_theta(b0|x)) + NLL(belief)` for one query.
pub fn calibration_loss(
    policy: &Policy,
    x: &[TokenId],
    classes: &[TokenId],
    target: &[f64],
    belief_segment: &[TokenId],
    scope: NllScope,
) -> Result<LossReport> {
    report(policy, |g| {
        calibration_loss_into(policy, x, classes, target, belief_segment, scope, 1.0, 1.0, g)
    })
}

#[allow(clippy::too_many_arguments)]
pub fn calibration_loss_into(
    policy: &Policy,
    x: &[TokenId],
    classes: &[TokenId],
    target: &[f64],
    belief_segment: &[TokenId],
    scope: NllScope,
    kl_weight: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<LossValue> {
    if target.len() != classes.len() {
        return Err(Error::LengthMismatch {
            left: target.len(),
            right: classes.len(),
        });
    }
    let q = policy.belief_probs(x, classes)?;
    let config = DivergenceConfig::default();
    let kl = kl_divergence_raw(target, &q, config)?;
    if kl_weight != 0.0 {
        let dq = kl_grad_wrt_q(target, &q, config.zero_floor);
        policy.accumulate_belief_grad(x, classes, &dq, scale * kl_weight, grad)?;
    }
    let segment = match scope {
        NllScope::ClassAndDescription => belief_segment,
        NllScope::ClassOnly => &belief_segment[..1.min(belief_segment.len())],
    };
    let nll = -policy.accumulate_log_prob_grad(x, segment, -scale, grad)?;
    Ok(LossValue {
        loss: kl_weight * kl + nll,
        diagnostics: Diagnostics {
            kl_term: kl,
            belief_nll: nll,
            ..Default::default()
        },
    })
}

/// `calibration_weight * KL + belief NLL + belief-conditioned DPO`, with
/// term selection from `config.terms`.
pub fn gdpo_loss(
    policy: &Policy,
    reference: &ReferencePolicy,
    ex: &EncodedExample,
    config: &AlignConfig,
) -> Result<LossReport> {
    let ctx = ex.belief_conditioned_query();
    let r = ReferencePair::new(reference, &ctx, &ex.accepted_response, &ex.rejected_response)?;
    report(policy, |g| gdpo_loss_into(policy, &r, ex, config, 1.0, g))
}

pub fn gdpo_loss_into(
    policy: &Policy,
    r: &ReferencePair,
    ex: &EncodedExample,
    config: &AlignConfig,
    scale: f64,
    grad: &mut [f64],
) -> Result<LossValue> {
    let mut total = LossValue::default();
    if config.terms.calibration() {
        let cal = calibration_loss_into(
            policy,
            &ex.query,
            &ex.belief_classes,
            &ex.target,
            &ex.accepted_belief_segment,
            config.nll_scope,
            config.calibration_weight,
            scale,
            grad,
        )?;
        total.add_scaled(&cal, 1.0);
    }
    if config.terms.preference() {
        let pref = dpo_loss_into(
            policy,
            r,
            &ex.belief_conditioned_query(),
            &ex.accepted_response,
            &ex.rejected_response,
            config.beta,
            scale,
            grad,
        )?;
        total.add_scaled(&pref, 1.0);
    }
    Ok(total)
}

/// One unpaired KTO item: a response judged under the desirable belief.
#[derive(Debug, Clone, PartialEq)]
pub struct KtoItem {
    pub query: Vec<TokenId>,
    pub belief_segment: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub desirable: bool,
}

impl KtoItem {
    pub fn context(&self) -> Vec<TokenId> {
        concat(&self.query, &self.belief_segment)
    }
}

/// Splits each pair into a desirable item `(x, b_c, y_c)` and an
/// undesirable item `(x, b_c, y_r)`.
pub fn kto_items(examples: &[EncodedExample]) -> Vec<KtoItem> {
    examples
        .iter()
        .flat_map(|ex| {
            [(&ex.accepted_response, true), (&ex.rejected_response, false)].map(|(y, desirable)| {
                KtoItem {
                    query: ex.query.clone(),
                    belief_segment: ex.accepted_belief_segment.clone(),
                    response: y.clone(),
                    desirable,
                }
            })
        })
        .collect()
}

/// Reference log-probabilities a KTO batch needs: each item's own response
/// and the mismatched response of the next item.
#[derive(Debug, Clone, PartialEq)]
pub struct KtoReference {
    pub matched: Vec<f64>,
    pub mismatched: Vec<f64>,
}

impl KtoReference {
    pub fn new(reference: &ReferencePolicy, items: &[KtoItem]) -> Result<Self> {
        let n = items.len();
        let mut matched = Vec::with_capacity(n);
        let mut mismatched = Vec::with_capacity(n);
        for (i, item) in items.iter().enumerate() {
            let ctx = item.context();
            matched.push(reference.log_prob(&ctx, &item.response)?);
            mismatched.push(reference.log_prob(&ctx, &items[(i + 1) % n].response)?);
        }
        Ok(Self {
            matched,
            mismatched,
        })
    }
}

/// Mean over items of `lambda_y - v(x, y)` with belief-conditioned rewards.
///
/// The reference point `z0` is `max(0, mean_i [log pi(y'_i|c_i) - log
/// ref(y'_i|c_i)])` where `y'_i` is the response of item `(i+1) mod n`.
/// It is differentiated through like any other term.
pub fn kto_gdpo_loss(
    policy: &Policy,
    reference: &ReferencePolicy,
    items: &[KtoItem],
    config: &AlignConfig,
) -> Result<LossReport> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let r = KtoReference::new(reference, items)?;
    report(policy, |g| kto_gdpo_loss_into(policy, &r, items, config, 1.0, g))
}

pub fn kto_gdpo_loss_into(
    policy: &Policy,
    r: &KtoReference,
    items: &[KtoItem],
    config: &AlignConfig,
    scale: f64,
    grad: &mut [f64],
) -> Result<LossValue> {
    let n = items.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if r.matched.len() != n || r.mismatched.len() != n {
        return Err(Error::LengthMismatch {
            left: r.matched.len(),
            right: n,
        });
    }
    let contexts: Vec<Vec<TokenId>> = items.iter().map(KtoItem::context).collect();
    let mut rewards = Vec::with_capacity(n);
    let mut kl_sum = 0.0;
    for i in 0..n {
        rewards.push(policy.log_prob(&contexts[i], &items[i].response)? - r.matched[i]);
        kl_sum += policy.log_prob(&contexts[i], &items[(i + 1) % n].response)? - r.mismatched[i];
    }
    let z_raw = kl_sum / n as f64;
    let z0 = z_raw.max(0.0);
    if !z0.is_finite() || rewards.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("log-ratio"));
    }
    let beta = config.beta;
    let mut loss = 0.0;
    let mut dz = 0.0;
    let (mut sum_d, mut n_d, mut sum_u, mut n_u) = (0.0, 0usize, 0.0, 0usize);
    for (i, item) in items.iter().enumerate() {
        let (lambda, arg, sign) = if item.desirable {
            sum_d += rewards[i];
            n_d += 1;
            (config.lambda_desirable, beta * (rewards[i] - z0), 1.0)
        } else {
            sum_u += rewards[i];
            n_u += 1;
            (config.lambda_undesirable, beta * (z0 - rewards[i]), -1.0)
        };
        let s = sigmoid(arg);
        loss += lambda - lambda * s;
        // d(-v)/dr for this item; d(-v)/dz0 is its negative.
        let d_r = -lambda * s * (1.0 - s) * beta * sign;
        dz -= d_r;
        policy.accumulate_log_prob_grad(&contexts[i], &item.response, scale * d_r / n as f64, grad)?;
    }
    if z_raw > 0.0 {
        let w = scale * dz / (n as f64 * n as f64);
        for i in 0..n {
            policy.accumulate_log_prob_grad(&contexts[i], &items[(i + 1) % n].response, w, grad)?;
        }
    }
    loss /= n as f64;
    let margin = if n_d > 0 && n_u > 0 {
        beta * (sum_d / n_d as f64 - sum_u / n_u as f64)
    } else {
        0.0
    };
    Ok(LossValue {
        loss,
        diagnostics: Diagnostics {
            reward_margin: margin,
            pref_term: loss,
            ..Default::default()
        },
    })
}
