//! Class-belief mapping and the belief scales used by the template generator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::belief::ClassToken;
use crate::error::{Error, Result};

/// Longest belief description, in word tokens. Keeps the belief segment
/// inside the default tabular context window.
pub const MAX_DESCRIPTION_WORDS: usize = 4;

/// Representative beliefs per class, `b[0]` (refusal) through `b[5]`
/// (strongest agreement).
const REPRESENTATIVE_BELIEFS: [&[&str]; 6] = [
    &["Not a moral issue", "DK/Refused", "Never heard of"],
    &[
        "China will not replace U.S.",
        "Not strong at all",
        "Never be justified",
        "Not well at all",
        "Very bad job",
        "Will not happen",
    ],
    &[
        "Next 50 years",
        "Not too strong",
        "Rarely be justified",
        "Wrong decision",
        "Remove its troops",
        "Somewhat bad job",
        "Not too well",
    ],
    &[
        "Depends on the situation",
        "Has not changed",
        "Has already happened",
        "No effect",
        "About the same",
    ],
    &[
        "Next 20 years",
        "Fairly strong",
        "Sometimes be justified",
        "Right decision",
        "Keep troops in Iraq",
        "Somewhat good job",
        "Somewhat well",
    ],
    &[
        "Next 10 years",
        "Very strong",
        "Often be justified",
        "Very well",
        "Very good job",
    ],
];

/// Lookup table from belief description to class token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassBeliefMap {
    entries: BTreeMap<Vec<String>, ClassToken>,
}

impl ClassBeliefMap {
    /// The opinion-task table plus the integer rating beliefs `1..=5`.
    pub fn standard() -> Self {
        let mut map = Self {
            entries: BTreeMap::new(),
        };
        for (class, descriptions) in REPRESENTATIVE_BELIEFS.iter().enumerate() {
            let class = ClassToken::new(class as u8).expect("six classes");
            for d in descriptions.iter() {
                map.insert(d, class).expect("table is consistent");
            }
        }
        for rating in 1..=5u8 {
            map.insert(&rating.to_string(), ClassToken::new(rating).unwrap())
                .expect("ratings are unique");
        }
        map
    }

    /// Adds an entry; a description already mapped to a different class is
    /// rejected.
    pub fn insert(&mut self, description: &str, class: ClassToken) -> Result<()> {
        let key = words(description);
        match self.entries.get(&key) {
            Some(&existing) if existing != class => Err(Error::InvalidArgument(format!(
                "description {description:?} already mapped to {existing}"
            ))),
            _ => {
                self.entries.insert(key, class);
                Ok(())
            }
        }
    }

    pub fn get(&self, description: &[String]) -> Option<ClassToken> {
        self.entries.get(description).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every word appearing in some description.
    pub fn words(&self) -> impl Iterator<Item = &String> {
        self.entries.keys().flatten()
    }
}

/// Maps a belief description onto its class token.
pub fn map_belief_to_class(description: &[String], map: &ClassBeliefMap) -> Result<ClassToken> {
    map.get(description)
        .ok_or_else(|| Error::UnmappedBelief(description.join(" ")))
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

/// Task family of a generated topic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Survey-style opinion questions with degree-of-agreement beliefs.
    #[default]
    Opinion,
    /// Movie reviews with integer ratings `1..=5` as beliefs.
    Review,
}

/// A graded answer scale: one description per class token plus the
/// question frame that introduces it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BeliefScale {
    pub frame: [&'static str; 2],
    /// Descriptions indexed by class token, `None` where the scale has no
    /// belief for that class.
    pub by_class: [Option<&'static str>; 6],
}

pub(crate) const OPINION_SCALES: [BeliefScale; 5] = [
    BeliefScale {
        frame: ["rate", "handling"],
        by_class: [
            Some("DK/Refused"),
            Some("Very bad job"),
            Some("Somewhat bad job"),
            Some("About the same"),
            Some("Somewhat good job"),
            Some("Very good job"),
        ],
    },
    BeliefScale {
        frame: ["how", "strong"],
        by_class: [
            Some("Never heard of"),
            Some("Not strong at all"),
            Some("Not too strong"),
            Some("Depends on the situation"),
            Some("Fairly strong"),
            Some("Very strong"),
        ],
    },
    BeliefScale {
        frame: ["is", "justified"],
        by_class: [
            Some("Not a moral issue"),
            Some("Never be justified"),
            Some("Rarely be justified"),
            Some("Depends on the situation"),
            Some("Sometimes be justified"),
            Some("Often be justified"),
        ],
    },
    BeliefScale {
        frame: ["when", "happens"],
        by_class: [
            Some("DK/Refused"),
            Some("Will not happen"),
            Some("Next 50 years"),
            Some("Has already happened"),
            Some("Next 20 years"),
            Some("Next 10 years"),
        ],
    },
    BeliefScale {
        frame: ["how", "well"],
        by_class: [
            Some("Never heard of"),
            Some("Not well at all"),
            Some("Not too well"),
            Some("Has not changed"),
            Some("Somewhat well"),
            Some("Very well"),
        ],
    },
];

pub(crate) const REVIEW_SCALE: BeliefScale = BeliefScale {
    frame: ["review", "movie"],
    by_class: [None, Some("1"), Some("2"), Some("3"), Some("4"), Some("5")],
};

/// Class tokens used for a topic with `k` beliefs, in belief-set order
/// (strongest agreement first, refusal last).
pub(crate) fn opinion_classes(k: usize) -> Result<Vec<u8>> {
    Ok(match k {
        2 => vec![5, 1],
        3 => vec![5, 3, 1],
        4 => vec![5, 4, 2, 1],
        5 => vec![5, 4, 2, 1, 0],
        6 => vec![5, 4, 3, 2, 1, 0],
        k if k > 6 => return Err(Error::ClassAlphabetExhausted(k)),
        k => {
            return Err(Error::InvalidArgument(format!(
                "a topic needs at least 2 beliefs, got {k}"
            )))
        }
    })
}

/// Rating classes `b[1]..b[5]` in ascending rating order.
pub(crate) fn review_classes(k: usize) -> Result<Vec<u8>> {
    match k {
        5 => Ok(vec![1, 2, 3, 4, 5]),
        k if k > 6 => Err(Error::ClassAlphabetExhausted(k)),
        k => Err(Error::InvalidArgument(format!(
            "the review task uses exactly 5 rating beliefs, got {k}"
        ))),
    }
}

/// Two-word stance phrase expressed by a response of the given class.
pub(crate) const STANCE: [[&str; 2]; 6] = [
    ["cannot", "say"],
    ["fully", "oppose"],
    ["mostly", "oppose"],
    ["stay", "neutral"],
    ["mostly", "support"],
    ["fully", "support"],
];

/// Style-specific first and last response words.
pub(crate) const OPENERS: [&str; 8] = [
    "honestly",
    "frankly",
    "personally",
    "overall",
    "truly",
    "clearly",
    "basically",
    "simply",
];
pub(crate) const CLOSERS: [&str; 8] = [
    "indeed",
    "really",
    "surely",
    "certainly",
    "plainly",
    "definitely",
    "absolutely",
    "seriously",
];

pub const MAX_STYLES: usize = OPENERS.len();

/// Every non-topic word the generator can emit, sorted.
pub fn generator_words() -> std::collections::BTreeSet<String> {
    let mut out: std::collections::BTreeSet<String> =
        ClassBeliefMap::standard().words().cloned().collect();
    for scale in OPINION_SCALES.iter().chain([&REVIEW_SCALE]) {
        out.extend(scale.frame.iter().map(|w| w.to_string()));
    }
    out.extend(STANCE.iter().flatten().map(|w| w.to_string()));
    out.extend(OPENERS.iter().chain(&CLOSERS).map(|w| w.to_string()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<String> {
        words(s)
    }

    #[test]
    fn table_rows() {
        let map = ClassBeliefMap::standard();
        assert_eq!(map_belief_to_class(&w("Very bad job"), &map).unwrap().index(), 1);
        assert_eq!(map_belief_to_class(&w("DK/Refused"), &map).unwrap().index(), 0);
        assert_eq!(map_belief_to_class(&w("Very good job"), &map).unwrap().index(), 5);
        assert_eq!(map_belief_to_class(&w("Keep troops in Iraq"), &map).unwrap().index(), 4);
    }

    #[test]
    fn unmapped_description() {
        let map = ClassBeliefMap::standard();
        let err = map_belief_to_class(&w("Maybe later"), &map).unwrap_err();
        assert!(err.to_string().contains("unmapped belief"));
    }

    #[test]
    fn conflicting_insert_rejected() {
        let mut map = ClassBeliefMap::standard();
        assert!(map.insert("Very bad job", ClassToken::new(2).unwrap()).is_err());
        assert!(map.insert("Very bad job", ClassToken::new(1).unwrap()).is_ok());
    }

    #[test]
    fn scales_agree_with_table_and_fit_window() {
        let map = ClassBeliefMap::standard();
        for scale in OPINION_SCALES.iter().chain([&REVIEW_SCALE]) {
            for (class, d) in scale.by_class.iter().enumerate() {
                if let Some(d) = d {
                    assert_eq!(map.get(&w(d)).map(|c| c.index()), Some(class), "{d}");
                    assert!(w(d).len() <= MAX_DESCRIPTION_WORDS, "{d}");
                }
            }
        }
    }

    #[test]
    fn class_selection() {
        assert_eq!(opinion_classes(5).unwrap(), vec![5, 4, 2, 1, 0]);
        assert!(matches!(opinion_classes(7), Err(Error::ClassAlphabetExhausted(7))));
        assert!(opinion_classes(1).is_err());
        assert!(review_classes(4).is_err());
    }
}
