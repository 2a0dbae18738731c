//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "GDPOCKPT"
//! version    u32
//! header_len u64
//! header     header_len bytes of JSON (backend, vocabulary, model shape)
//! params     param_count x f64
//! digest     32 bytes, SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, NeuralConfig, NeuralModel, Policy, TabularModel};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GDPOCKPT";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    backend: String,
    vocab: Vec<String>,
    vocab_hash: String,
    context_length: usize,
    param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tabular: Option<TabularShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neural: Option<NeuralConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabularShape {
    window: usize,
    overflow_rows: usize,
    contexts: Vec<Vec<TokenId>>,
}

pub fn encode_checkpoint(policy: &Policy) -> Vec<u8> {
    let (tabular, neural) = match policy.model() {
        Model::Tabular(m) => (
            Some(TabularShape {
                window: m.window(),
                overflow_rows: m.overflow_rows(),
                contexts: m.contexts().to_vec(),
            }),
            None,
        ),
        Model::Neural(m) => (None, Some(m.config().clone())),
    };
    let header = Header {
        backend: policy.backend_name().to_owned(),
        vocab: policy.vocab().tokens().to_vec(),
        vocab_hash: policy.vocab().hash(),
        context_length: policy.context_length(),
        param_count: policy.num_params(),
        tabular,
        neural,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + header.len() + 8 * policy.num_params() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for x in policy.params() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Policy> {
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| Error::Checkpoint("header length exceeds file".into()))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let raw = &body[header_end..];
    if raw.len() != header.param_count * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {} bytes",
            header.param_count,
            raw.len()
        )));
    }
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let vocab = Vocabulary::from_tokens(header.vocab)?;
    if vocab.hash() != header.vocab_hash {
        return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
    }
    let model = match (header.backend.as_str(), header.tabular, header.neural) {
        ("tabular", Some(t), None) => Model::Tabular(TabularModel::from_parts(
            vocab.len(),
            t.window,
            t.overflow_rows,
            t.contexts,
            params,
        )?),
        ("neural", None, Some(c)) => Model::Neural(NeuralModel::from_parts(vocab.len(), &c, params)?),
        (b, _, _) => return Err(Error::Checkpoint(format!("unsupported backend {b:?}"))),
    };
    Policy::new(Arc::new(vocab), model, header.context_length)
}

pub fn save_checkpoint(policy: &Policy, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(policy)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Policy> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
