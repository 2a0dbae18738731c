//! Majority / minority / other partition of a dataset by belief share.

use serde::{Deserialize, Serialize};

use crate::datagen::PreferenceExample;
use crate::vocab::EncodedExample;

/// Anything carrying its topic's target distribution and accepted belief.
pub trait BeliefShare {
    fn target(&self) -> &[f64];
    fn accepted(&self) -> usize;
}

impl BeliefShare for PreferenceExample {
    fn target(&self) -> &[f64] {
        self.target_dist.probs()
    }
    fn accepted(&self) -> usize {
        self.accepted_belief
    }
}

impl BeliefShare for EncodedExample {
    fn target(&self) -> &[f64] {
        &self.target
    }
    fn accepted(&self) -> usize {
        self.accepted_belief
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Majority,
    Minority,
    Other,
}

/// Index sets over a dataset. Disjoint, and together they cover it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubsetSplit {
    pub majority: Vec<usize>,
    pub minority: Vec<usize>,
    pub other: Vec<usize>,
}

impl SubsetSplit {
    pub fn get(&self, s: Subset) -> &[usize] {
        match s {
            Subset::Majority => &self.majority,
            Subset::Minority => &self.minority,
            Subset::Other => &self.other,
        }
    }
}

/// Subset of one example: majority if its accepted belief is the first
/// argmax of the target, minority if it is the first argmin among nonzero
/// entries, other otherwise. Majority wins when both coincide.
pub fn classify(target: &[f64], accepted: usize) -> Subset {
    let mut max = 0;
    let mut min: Option<usize> = None;
    for (i, &p) in target.iter().enumerate() {
        if p > target[max] {
            max = i;
        }
        if p > 0.0 && min.is_none_or(|m| p < target[m]) {
            min = Some(i);
        }
    }
    if accepted == max {
        Subset::Majority
    } else if Some(accepted) == min {
        Subset::Minority
    } else {
        Subset::Other
    }
}

pub fn split_by_belief_share<E: BeliefShare>(examples: &[E]) -> SubsetSplit {
    let mut out = SubsetSplit::default();
    for (i, ex) in examples.iter().enumerate() {
        match classify(ex.target(), ex.accepted()) {
            Subset::Majority => out.majority.push(i),
            Subset::Minority => out.minority.push(i),
            Subset::Other => out.other.push(i),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const T4: [f64; 5] = [0.06, 0.56, 0.24, 0.08, 0.06];

    #[test]
    fn skewed_five_rules() {
        assert_eq!(classify(&T4, 1), Subset::Majority);
        assert_eq!(classify(&T4, 0), Subset::Minority);
        assert_eq!(classify(&T4, 4), Subset::Other);
        assert_eq!(classify(&T4, 3), Subset::Other);
        assert_eq!(classify(&T4, 2), Subset::Other);
    }

    #[test]
    fn uniform_majority_takes_precedence() {
        let u = [0.25; 4];
        assert_eq!(classify(&u, 0), Subset::Majority);
        for b in 1..4 {
            assert_eq!(classify(&u, b), Subset::Other);
        }
    }

    #[test]
    fn zero_probability_never_minority() {
        let t = [0.0, 0.7, 0.3];
        assert_eq!(classify(&t, 2), Subset::Minority);
        assert_eq!(classify(&t, 0), Subset::Other);
    }
}
