//! Belief sets, belief distributions and the divergence math used by
//! training and evaluation.
//!
//! Training-side quantities (KL) are in nats. The Jensen–Shannon distance
//! is computed with base-2 logarithms so that it lies in `[0, 1]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of artificial belief class tokens, `b[0]..b[5]`.
pub const NUM_CLASS_TOKENS: usize = 6;

/// Tolerance on the total mass of a [`BeliefDistribution`].
pub const MASS_TOLERANCE: f64 = 1e-9;

/// One of the six artificial belief class tokens.
///
/// `b[0]` is reserved for refusal / no opinion; `b[1]..b[5]` encode
/// increasing degrees of agreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ClassToken(u8);

impl ClassToken {
    pub fn new(index: u8) -> Result<Self> {
        if (index as usize) < NUM_CLASS_TOKENS {
            Ok(Self(index))
        } else {
            Err(Error::InvalidArgument(format!(
                "class token index {index} outside b[0]..b[5]"
            )))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// All six class tokens in id order.
    pub fn all() -> impl Iterator<Item = ClassToken> {
        (0..NUM_CLASS_TOKENS as u8).map(ClassToken)
    }

    /// Surface form used in the vocabulary and in data files.
    pub fn symbol(self) -> String {
        format!("b[{}]", self.0)
    }

    pub fn parse_symbol(s: &str) -> Option<Self> {
        let inner = s.strip_prefix("b[")?.strip_suffix(']')?;
        inner.parse::<u8>().ok().and_then(|i| Self::new(i).ok())
    }
}

impl TryFrom<u8> for ClassToken {
    type Error = Error;
    fn try_from(value: u8) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ClassToken> for u8 {
    fn from(value: ClassToken) -> u8 {
        value.0
    }
}

impl fmt::Display for ClassToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b[{}]", self.0)
    }
}

/// A belief: its class token plus a textual description (word tokens).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Belief {
    pub class_token: ClassToken,
    pub description: Vec<String>,
}

impl Belief {
    pub fn new(class_token: ClassToken, description: &str) -> Self {
        Self {
            class_token,
            description: description.split_whitespace().map(str::to_owned).collect(),
        }
    }

    pub fn description_text(&self) -> String {
        self.description.join(" ")
    }
}

/// Ordered set of `K >= 2` beliefs for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Belief>", into = "Vec<Belief>")]
pub struct BeliefSet {
    beliefs: Vec<Belief>,
}

impl BeliefSet {
    pub fn new(beliefs: Vec<Belief>) -> Result<Self> {
        if beliefs.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a belief set needs at least 2 beliefs, got {}",
                beliefs.len()
            )));
        }
        if beliefs.len() > NUM_CLASS_TOKENS {
            return Err(Error::ClassAlphabetExhausted(beliefs.len()));
        }
        for (i, a) in beliefs.iter().enumerate() {
            if a.description.is_empty() {
                return Err(Error::InvalidArgument(format!("belief {i} has an empty description")));
            }
            for b in &beliefs[..i] {
                if a.description == b.description {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate belief description {:?}",
                        a.description_text()
                    )));
                }
                if a.class_token == b.class_token {
                    return Err(Error::InvalidArgument(format!(
                        "class token {} used by two beliefs",
                        a.class_token
                    )));
                }
            }
        }
        Ok(Self { beliefs })
    }

    pub fn len(&self) -> usize {
        self.beliefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beliefs.is_empty()
    }

    pub fn beliefs(&self) -> &[Belief] {
        &self.beliefs
    }

    pub fn get(&self, index: usize) -> Option<&Belief> {
        self.beliefs.get(index)
    }

    pub fn class_tokens(&self) -> Vec<ClassToken> {
        self.beliefs.iter().map(|b| b.class_token).collect()
    }

    /// Index of the belief carrying `class`, if any.
    pub fn index_of_class(&self, class: ClassToken) -> Option<usize> {
        self.beliefs.iter().position(|b| b.class_token == class)
    }
}

impl TryFrom<Vec<Belief>> for BeliefSet {
    type Error = Error;
    fn try_from(value: Vec<Belief>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<BeliefSet> for Vec<Belief> {
    fn from(value: BeliefSet) -> Self {
        value.beliefs
    }
}

/// Probability vector over an ordered belief set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BeliefDistribution {
    probs: Vec<f64>,
}

impl BeliefDistribution {
    /// Validates entries in `[0, 1]` summing to one within [`MASS_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("belief distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidDistribution(format!("entry {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidDistribution("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyEvidence);
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidDistribution("uniform over zero beliefs".into()));
        }
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn point_mass(k: usize, index: usize) -> Result<Self> {
        if index >= k {
            return Err(Error::InvalidArgument(format!("index {index} outside 0..{k}")));
        }
        let mut probs = vec![0.0; k];
        probs[index] = 1.0;
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// First index of the largest entry.
    pub fn argmax(&self) -> usize {
        first_extreme(&self.probs, |a, b| a > b)
    }

    /// First index of the smallest entry.
    pub fn argmin(&self) -> usize {
        first_extreme(&self.probs, |a, b| a < b)
    }

    /// First index of the smallest strictly positive entry.
    pub fn argmin_nonzero(&self) -> usize {
        let mut best: Option<usize> = None;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 && best.is_none_or(|b| p < self.probs[b]) {
                best = Some(i);
            }
        }
        // A valid distribution has at least one positive entry.
        best.unwrap_or(0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

impl TryFrom<Vec<f64>> for BeliefDistribution {
    type Error = Error;
    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<BeliefDistribution> for Vec<f64> {
    fn from(value: BeliefDistribution) -> Self {
        value.probs
    }
}

fn first_extreme(values: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[best]) {
            best = i;
        }
    }
    best
}

/// Fixed numerical conventions for divergences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceConfig {
    /// Floor applied to the second KL argument before renormalizing.
    pub zero_floor: f64,
}

impl DivergenceConfig {
    pub const DEFAULT_ZERO_FLOOR: f64 = 1e-12;

    pub fn new(zero_floor: f64) -> Result<Self> {
        if !(zero_floor > 0.0 && zero_floor < 1e-6) {
            return Err(Error::InvalidArgument(format!(
                "zero_floor must lie in (0, 1e-6), got {zero_floor}"
            )));
        }
        Ok(Self { zero_floor })
    }
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            zero_floor: Self::DEFAULT_ZERO_FLOOR,
        }
    }
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if p.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("divergence input"));
    }
    Ok(())
}

/// `q` floored at `floor` and renormalized.
pub fn floor_and_renormalize(q: &[f64], floor: f64) -> Vec<f64> {
    let floored: Vec<f64> = q.iter().map(|&v| v.max(floor)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

/// `q` with entries on the support of `p` floored at `floor`, then
/// renormalized. Entries where `p` is zero never enter KL, so leaving them
/// alone keeps `KL(p || p)` exactly zero.
pub fn floor_on_support(p: &[f64], q: &[f64], floor: f64) -> Vec<f64> {
    if !p.iter().zip(q).any(|(&pi, &qi)| pi > 0.0 && qi < floor) {
        return q.to_vec();
    }
    let floored: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { qi.max(floor) } else { qi })
        .collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

/// `KL(p || q)` in nats on raw slices, with `q` floored and renormalized.
pub fn kl_divergence_raw(p: &[f64], q: &[f64], config: DivergenceConfig) -> Result<f64> {
    check_pair(p, q)?;
    let q = floor_on_support(p, q, config.zero_floor);
    let kl: f64 = p
        .iter()
        .zip(&q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum();
    // Rounding can leave a tiny negative value when p == q.
    Ok(kl.max(0.0))
}

/// `KL(p || q)` in nats with the default flooring convention.
pub fn kl_divergence(p: &BeliefDistribution, q: &BeliefDistribution) -> Result<f64> {
    kl_divergence_raw(p.probs(), q.probs(), DivergenceConfig::default())
}

/// Jensen–Shannon distance (square root of the base-2 JS divergence).
pub fn js_distance_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    let half_kl_to_mixture = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&ai, _)| ai > 0.0)
            .map(|(&ai, &bi)| ai * (2.0 * ai / (ai + bi)).log2())
            .sum::<f64>()
    };
    let jsd = 0.5 * (half_kl_to_mixture(p, q) + half_kl_to_mixture(q, p));
    Ok(jsd.clamp(0.0, 1.0).sqrt())
}

pub fn js_distance(p: &BeliefDistribution, q: &BeliefDistribution) -> Result<f64> {
    js_distance_raw(p.probs(), q.probs())
}

/// Total-variation distance, `0.5 * sum |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Maximum-likelihood belief distribution from per-belief counts.
pub fn mle_belief_distribution(counts: &[u64]) -> Result<BeliefDistribution> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyEvidence);
    }
    BeliefDistribution::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Signed-count variant for callers holding possibly negative tallies.
pub fn mle_belief_distribution_signed(counts: &[i64]) -> Result<BeliefDistribution> {
    if let Some(c) = counts.iter().find(|&&c| c < 0) {
        return Err(Error::InvalidArgument(format!("negative count {c}")));
    }
    let unsigned: Vec<u64> = counts.iter().map(|&c| c as u64).collect();
    mle_belief_distribution(&unsigned)
}

/// The four untrained reference distributions plotted alongside training
/// curves.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBaselines {
    pub majority: BeliefDistribution,
    pub reverse: BeliefDistribution,
    pub uniform: BeliefDistribution,
    pub noise: BeliefDistribution,
}

impl ReferenceBaselines {
    /// Baselines in the order majority, reverse, uniform, noise.
    pub fn as_array(&self) -> [&BeliefDistribution; 4] {
        [&self.majority, &self.reverse, &self.uniform, &self.noise]
    }
}

pub fn reference_baselines(
    p_star: &BeliefDistribution,
    noise_level: f64,
) -> Result<ReferenceBaselines> {
    if !noise_level.is_finite() || noise_level < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise level must be a nonnegative finite number, got {noise_level}"
        )));
    }
    let p = p_star.probs();
    let k = p.len();

    let majority = BeliefDistribution::point_mass(k, p_star.argmax())?;

    // Rank positions by descending probability (stable), then hand the
    // i-th largest value to the i-th smallest position.
    let mut desc: Vec<usize> = (0..k).collect();
    desc.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let mut asc: Vec<usize> = (0..k).collect();
    asc.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut reversed = vec![0.0; k];
    for (big, small) in desc.iter().zip(&asc) {
        reversed[*small] = p[*big];
    }
    let reverse = BeliefDistribution::from_weights(&reversed)?;

    let uniform = BeliefDistribution::uniform(k)?;

    let (lo, hi) = (p_star.argmin(), p_star.argmax());
    let mut noisy = p.to_vec();
    noisy[lo] += noise_level;
    noisy[hi] -= noise_level;
    if noisy.iter().any(|&v| v < 0.0) {
        return Err(Error::NoiseTooLarge(noise_level));
    }
    let clipped: Vec<f64> = noisy.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let noise = BeliefDistribution::from_weights(&clipped)?;

    Ok(ReferenceBaselines {
        majority,
        reverse,
        uniform,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SKEWED_FIVE: [f64; 5] = [0.06, 0.56, 0.24, 0.08, 0.06];

    fn dist(v: &[f64]) -> BeliefDistribution {
        BeliefDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let p = dist(&[0.5, 0.5]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_matches_high_precision_value() {
        // 0.5 ln 2 + 0.5 ln(2/3), evaluated at 50 digits.
        let expected = 0.143_841_036_225_890_463_719_609_502_996_913_715_751_754_855_448_88;
        let got = kl_divergence(&dist(&[0.5, 0.5]), &dist(&[0.25, 0.75])).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got}");
    }

    #[test]
    fn kl_disjoint_is_finite_and_bounded() {
        let got = kl_divergence(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap();
        assert!(got.is_finite());
        assert!(got <= (1.0 / DivergenceConfig::DEFAULT_ZERO_FLOOR).ln() + 1e-9);
        assert!(got > 20.0);
    }

    #[test]
    fn kl_rejects_mismatch_and_nan() {
        assert!(matches!(
            kl_divergence_raw(&[0.5, 0.5], &[1.0], DivergenceConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            kl_divergence_raw(&[f64::NAN, 0.5], &[0.5, 0.5], DivergenceConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn js_fixed_points() {
        let p = dist(&SKEWED_FIVE);
        assert_eq!(js_distance(&p, &p).unwrap(), 0.0);
        let d = js_distance(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn js_matches_high_precision_value() {
        let expected = 0.376_676_583_737_431_196_229_067_309_454_850_070_190_363_437_275_24;
        let got = js_distance(&BeliefDistribution::uniform(5).unwrap(), &dist(&SKEWED_FIVE)).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got}");
    }

    #[test]
    fn js_rejects_mismatch() {
        assert!(js_distance_raw(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn mle_examples() {
        let d = mle_belief_distribution(&[7126, 2874]).unwrap();
        assert_eq!(d.probs(), &[0.7126, 0.2874]);
        let d = mle_belief_distribution(&[3, 3, 3]).unwrap();
        for &p in d.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(matches!(mle_belief_distribution(&[0, 0]), Err(Error::EmptyEvidence)));
        assert!(mle_belief_distribution_signed(&[3, -1]).is_err());
    }

    #[test]
    fn baselines_on_skewed_five() {
        let b = reference_baselines(&dist(&SKEWED_FIVE), 0.1).unwrap();
        assert_eq!(b.majority.probs(), &[0.0, 1.0, 0.0, 0.0, 0.0]);
        // Hand evaluation: argmin is index 0 (first of the two 0.06 entries),
        // argmax is index 1.
        let expected_noise = [0.16, 0.46, 0.24, 0.08, 0.06];
        for (got, want) in b.noise.probs().iter().zip(expected_noise) {
            assert!((got - want).abs() < 1e-12, "{:?}", b.noise.probs());
        }
        // Descending ranks: 1, 2, 3, 0, 4; ascending ranks: 0, 4, 3, 2, 1.
        // Pairing them swaps 1<->0 and 2<->4, index 3 stays.
        let expected_reverse = [0.56, 0.06, 0.06, 0.08, 0.24];
        for (got, want) in b.reverse.probs().iter().zip(expected_reverse) {
            assert!((got - want).abs() < 1e-12, "{:?}", b.reverse.probs());
        }
        assert_eq!(b.majority.entropy(), 0.0);
    }

    #[test]
    fn reverse_of_uniform_is_uniform() {
        let u = BeliefDistribution::uniform(4).unwrap();
        let b = reference_baselines(&u, 0.0).unwrap();
        assert_eq!(b.reverse, u);
    }

    #[test]
    fn noise_too_large() {
        let err = reference_baselines(&dist(&[0.7, 0.3]), 0.8).unwrap_err();
        assert!(matches!(err, Error::NoiseTooLarge(_)));
    }

    #[test]
    fn distribution_validation() {
        assert!(BeliefDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(BeliefDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(BeliefDistribution::new(vec![0.5, 0.5 + 5e-10]).is_ok());
        let d: BeliefDistribution = serde_json::from_str("[0.7126,0.2874]").unwrap();
        assert_eq!(serde_json::to_string(&d).unwrap(), "[0.7126,0.2874]");
        assert!(serde_json::from_str::<BeliefDistribution>("[0.7,0.7]").is_err());
    }

    #[test]
    fn belief_set_validation() {
        let b = |c: u8, d: &str| Belief::new(ClassToken::new(c).unwrap(), d);
        assert!(BeliefSet::new(vec![b(1, "yes")]).is_err());
        assert!(BeliefSet::new(vec![b(1, "yes"), b(2, "yes")]).is_err());
        assert!(BeliefSet::new(vec![b(1, "yes"), b(1, "no")]).is_err());
        assert!(BeliefSet::new(vec![b(5, "yes"), b(1, "no")]).is_ok());
        assert!(ClassToken::new(6).is_err());
        assert_eq!(ClassToken::parse_symbol("b[3]"), ClassToken::new(3).ok());
    }

    fn arb_dist(k: usize) -> impl Strategy<Value = BeliefDistribution> {
        proptest::collection::vec(0.0f64..1.0, k).prop_filter_map("positive mass", |w| {
            BeliefDistribution::from_weights(&w).ok()
        })
    }

    fn arb_pair() -> impl Strategy<Value = (BeliefDistribution, BeliefDistribution)> {
        (2usize..=6).prop_flat_map(|k| (arb_dist(k), arb_dist(k)))
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_on_self((p, q) in arb_pair()) {
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn js_symmetric_and_bounded((p, q) in arb_pair()) {
            let a = js_distance(&p, &q).unwrap();
            let b = js_distance(&q, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn mle_is_valid(counts in proptest::collection::vec(0u64..10_000, 2..7)) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let d = mle_belief_distribution(&counts).unwrap();
            prop_assert!(BeliefDistribution::new(d.probs().to_vec()).is_ok());
        }

        #[test]
        fn baselines_are_valid((p, _) in arb_pair()) {
            let noise = p.probs()[p.argmax()] * 0.5;
            let b = reference_baselines(&p, noise).unwrap();
            for d in b.as_array() {
                prop_assert!(BeliefDistribution::new(d.probs().to_vec()).is_ok());
            }
            prop_assert_eq!(b.majority.entropy(), 0.0);
        }
    }
}
