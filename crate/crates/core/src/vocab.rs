//! Closed vocabulary and the token layout of training sequences.
//!
//! A full sequence reads
//! `<bos> question.. | b[k] description.. <sep> | response.. <eos>`:
//! the query, the belief segment, then the response segment.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::belief::{Belief, ClassToken, NUM_CLASS_TOKENS};
use crate::datagen::{generator_words, topic_token, PreferenceExample};
use crate::error::{Error, Result};

pub type TokenId = u32;

/// Largest vocabulary the data generator may produce.
pub const MAX_VOCAB: usize = 512;

const SPECIALS: [&str; 3] = ["<bos>", "<eos>", "<sep>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub const BOS: TokenId = 0;
    pub const EOS: TokenId = 1;
    pub const SEP: TokenId = 2;
    /// First class token id; `b[0]..b[5]` are contiguous from here.
    pub const CLASS_BASE: TokenId = 3;

    /// Vocabulary covering every word the generator emits for `num_topics`
    /// topics.
    pub fn standard(num_topics: usize) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ClassToken::all().map(ClassToken::symbol));
        tokens.extend(generator_words());
        tokens.extend((0..num_topics).map(topic_token));
        Self::from_tokens(tokens)
    }

    /// Builds a vocabulary from an explicit token list. The list must start
    /// with the special tokens and the six class tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() > MAX_VOCAB {
            return Err(Error::InvalidArgument(format!(
                "vocabulary has {} tokens, limit is {MAX_VOCAB}",
                tokens.len()
            )));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::InvalidArgument(format!("token {i} must be {s}")));
            }
        }
        for c in ClassToken::all() {
            let id = Self::CLASS_BASE as usize + c.index();
            if tokens.get(id) != Some(&c.symbol()) {
                return Err(Error::InvalidArgument(format!("token {id} must be {c}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<TokenId> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::OutOfVocabulary(token.to_owned()))
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, words: &[String]) -> Result<Vec<TokenId>> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>").to_owned())
            .collect()
    }

    pub fn class_id(class: ClassToken) -> TokenId {
        Self::CLASS_BASE + class.index() as TokenId
    }

    pub fn class_of(id: TokenId) -> Option<ClassToken> {
        let rel = id.checked_sub(Self::CLASS_BASE)? as usize;
        (rel < NUM_CLASS_TOKENS).then(|| ClassToken::new(rel as u8).expect("in range"))
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex(&h.finalize())
    }

    /// `<bos>` followed by the question words.
    pub fn query(&self, question: &[String]) -> Result<Vec<TokenId>> {
        let mut out = Vec::with_capacity(question.len() + 1);
        out.push(Self::BOS);
        out.extend(self.encode(question)?);
        Ok(out)
    }

    /// Class token, description words, separator.
    pub fn belief_segment(&self, belief: &Belief) -> Result<Vec<TokenId>> {
        let mut out = Vec::with_capacity(belief.description.len() + 2);
        out.push(Self::class_id(belief.class_token));
        out.extend(self.encode(&belief.description)?);
        out.push(Self::SEP);
        Ok(out)
    }

    /// Response words followed by `<eos>`.
    pub fn response_segment(&self, response: &[String]) -> Result<Vec<TokenId>> {
        let mut out = self.encode(response)?;
        out.push(Self::EOS);
        Ok(out)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A preference example in token ids, ready for loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub topic_id: usize,
    pub query: Vec<TokenId>,
    /// Class token id of every belief in the topic's set, in set order.
    pub belief_classes: Vec<TokenId>,
    pub target: Vec<f64>,
    pub accepted_belief: usize,
    pub rejected_belief: usize,
    /// Belief segment of the accepted belief.
    pub accepted_belief_segment: Vec<TokenId>,
    pub rejected_belief_segment: Vec<TokenId>,
    pub accepted_response: Vec<TokenId>,
    pub rejected_response: Vec<TokenId>,
}

impl EncodedExample {
    pub fn new(vocab: &Vocabulary, ex: &PreferenceExample) -> Result<Self> {
        let beliefs = ex.belief_set.beliefs();
        Ok(Self {
            topic_id: ex.topic_id,
            query: vocab.query(&ex.question)?,
            belief_classes: beliefs
                .iter()
                .map(|b| Vocabulary::class_id(b.class_token))
                .collect(),
            target: ex.target_dist.probs().to_vec(),
            accepted_belief: ex.accepted_belief,
            rejected_belief: ex.rejected_belief,
            accepted_belief_segment: vocab.belief_segment(&beliefs[ex.accepted_belief])?,
            rejected_belief_segment: vocab.belief_segment(&beliefs[ex.rejected_belief])?,
            accepted_response: vocab.response_segment(&ex.accepted_response)?,
            rejected_response: vocab.response_segment(&ex.rejected_response)?,
        })
    }

    /// Full chosen completion: accepted belief segment then response.
    pub fn chosen_completion(&self) -> Vec<TokenId> {
        concat(&self.accepted_belief_segment, &self.accepted_response)
    }

    /// Full rejected completion: rejected belief segment then response.
    pub fn rejected_completion(&self) -> Vec<TokenId> {
        concat(&self.rejected_belief_segment, &self.rejected_response)
    }

    /// Query extended with the accepted belief segment, `x + b_c`.
    pub fn belief_conditioned_query(&self) -> Vec<TokenId> {
        concat(&self.query, &self.accepted_belief_segment)
    }
}

pub fn encode_all(vocab: &Vocabulary, examples: &[PreferenceExample]) -> Result<Vec<EncodedExample>> {
    examples.iter().map(|e| EncodedExample::new(vocab, e)).collect()
}

pub(crate) fn concat(a: &[TokenId], b: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_layout() {
        let v = Vocabulary::standard(20).unwrap();
        assert!(v.len() <= MAX_VOCAB);
        assert_eq!(v.id("<bos>").unwrap(), Vocabulary::BOS);
        for c in ClassToken::all() {
            let id = Vocabulary::class_id(c);
            assert_eq!(v.token(id).unwrap(), c.symbol());
            assert_eq!(Vocabulary::class_of(id), Some(c));
        }
        assert_eq!(Vocabulary::class_of(Vocabulary::SEP), None);
        assert_eq!(Vocabulary::class_of(Vocabulary::CLASS_BASE + 6), None);
        assert!(v.id("topic_19").is_ok());
        assert!(matches!(v.id("topic_20"), Err(Error::OutOfVocabulary(_))));
    }

    #[test]
    fn max_topics_fit() {
        let v = Vocabulary::standard(crate::datagen::MAX_TOPICS).unwrap();
        assert!(v.len() <= MAX_VOCAB);
    }

    #[test]
    fn hash_depends_on_tokens() {
        let a = Vocabulary::standard(3).unwrap();
        let b = Vocabulary::standard(4).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Vocabulary::standard(3).unwrap().hash());
    }

    #[test]
    fn rejects_bad_lists() {
        assert!(Vocabulary::from_tokens(vec!["x".into()]).is_err());
        let mut t = Vocabulary::standard(1).unwrap().tokens().to_vec();
        t.push("<bos>".into());
        assert!(Vocabulary::from_tokens(t).is_err());
    }
}
