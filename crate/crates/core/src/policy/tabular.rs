//! Logit table indexed by the last `window` tokens of the context.
//!
//! Contexts seen in the support corpus get a private row. Anything else
//! shares one of `overflow_rows` rows chosen by an FNV-1a hash of the
//! truncated context.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::SequenceModel;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularConfig {
    /// Number of trailing context tokens that select a row.
    pub window: usize,
    /// Shared rows for contexts outside the registered support.
    pub overflow_rows: usize,
    pub context_length: usize,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            window: 8,
            overflow_rows: 16,
            context_length: 24,
        }
    }
}

impl TabularConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.overflow_rows == 0 || self.context_length < 2 {
            return Err(Error::InvalidArgument(
                "tabular window, overflow_rows must be >= 1 and context_length >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    vocab_size: usize,
    window: usize,
    overflow_rows: usize,
    contexts: Vec<Vec<TokenId>>,
    lookup: HashMap<Vec<TokenId>, usize>,
    params: Vec<f64>,
}

impl TabularModel {
    /// Zero-initialized (uniform) table with a private row for every
    /// truncated prefix of every sequence in `support`.
    pub fn new(vocab_size: usize, config: &TabularConfig, support: &[Vec<TokenId>]) -> Result<Self> {
        config.validate()?;
        let mut contexts: Vec<Vec<TokenId>> = Vec::new();
        let mut lookup = HashMap::new();
        for seq in support {
            for p in 1..=seq.len() {
                let key = truncate(&seq[..p], config.window).to_vec();
                if !lookup.contains_key(&key) {
                    lookup.insert(key.clone(), contexts.len());
                    contexts.push(key);
                }
            }
        }
        let rows = contexts.len() + config.overflow_rows;
        Ok(Self {
            vocab_size,
            window: config.window,
            overflow_rows: config.overflow_rows,
            contexts,
            lookup,
            params: vec![0.0; rows * vocab_size],
        })
    }

    /// Rebuilds a table from checkpointed parts.
    pub fn from_parts(
        vocab_size: usize,
        window: usize,
        overflow_rows: usize,
        contexts: Vec<Vec<TokenId>>,
        params: Vec<f64>,
    ) -> Result<Self> {
        let rows = contexts.len() + overflow_rows;
        if params.len() != rows * vocab_size {
            return Err(Error::Checkpoint(format!(
                "tabular parameter count {} does not match {rows} rows of {vocab_size}",
                params.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(contexts.len());
        for (i, c) in contexts.iter().enumerate() {
            if c.len() > window || lookup.insert(c.clone(), i).is_some() {
                return Err(Error::Checkpoint("invalid tabular context registry".into()));
            }
        }
        Ok(Self {
            vocab_size,
            window,
            overflow_rows,
            contexts,
            lookup,
            params,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn overflow_rows(&self) -> usize {
        self.overflow_rows
    }

    pub fn contexts(&self) -> &[Vec<TokenId>] {
        &self.contexts
    }

    pub fn num_rows(&self) -> usize {
        self.contexts.len() + self.overflow_rows
    }

    /// Row used to predict `tokens[p]`.
    pub fn row_for(&self, tokens: &[TokenId], p: usize) -> usize {
        let key = truncate(&tokens[..p], self.window);
        match self.lookup.get(key) {
            Some(&r) => r,
            None => self.contexts.len() + (fnv1a(key) % self.overflow_rows as u64) as usize,
        }
    }

    /// Mutable logits of one row.
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let v = self.vocab_size;
        &mut self.params[row * v..(row + 1) * v]
    }
}

fn truncate(prefix: &[TokenId], window: usize) -> &[TokenId] {
    &prefix[prefix.len().saturating_sub(window)..]
}

fn fnv1a(tokens: &[TokenId]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tokens {
        for b in t.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl SequenceModel for TabularModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, tokens: &[TokenId], positions: &[usize]) -> Vec<Vec<f64>> {
        let v = self.vocab_size;
        positions
            .iter()
            .map(|&p| {
                let r = self.row_for(tokens, p);
                self.params[r * v..(r + 1) * v].to_vec()
            })
            .collect()
    }

    fn backprop(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        dlogits: &[Vec<f64>],
        grad: &mut [f64],
    ) {
        let v = self.vocab_size;
        for (&p, d) in positions.iter().zip(dlogits) {
            let r = self.row_for(tokens, p);
            for (g, x) in grad[r * v..(r + 1) * v].iter_mut().zip(d) {
                *g += x;
            }
        }
    }
}
