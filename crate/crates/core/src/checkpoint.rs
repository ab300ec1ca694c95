//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes   "NFP1" (encoder) or "NFL1" (LSTM)
//! meta_len   u64       byte length of the metadata block
//! metadata   meta_len  UTF-8 JSON: configs, vocabulary, tensor names and shapes
//! payload    8·N       every parameter as f64, tensors in metadata order, row-major
//! ```
//!
//! The file must end exactly after the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::VersionId;
use crate::model::{ModelConfig, Parameters};
use crate::numerics::Tensor;
use crate::tokenizer::Vocabulary;
use crate::training::{ParamSet, TrainConfig};

pub const ENCODER_MAGIC: [u8; 4] = *b"NFP1";
pub const LSTM_MAGIC: [u8; 4] = *b"NFL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Encoder,
    Lstm,
}

/// Identifies the checkpoint kind from its first four bytes.
pub fn sniff(bytes: &[u8]) -> Result<CheckpointKind> {
    match bytes.get(..4) {
        Some(m) if m == ENCODER_MAGIC => Ok(CheckpointKind::Encoder),
        Some(m) if m == LSTM_MAGIC => Ok(CheckpointKind::Lstm),
        Some(m) => Err(Error::Checkpoint(format!("unknown magic {m:?}"))),
        None => Err(Error::Checkpoint("file shorter than the magic".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn entries_of<P: ParamSet>(params: &P) -> Vec<TensorEntry> {
    params
        .tensors()
        .into_iter()
        .map(|(name, t)| TensorEntry {
            name,
            shape: t.shape().to_vec(),
        })
        .collect()
}

pub(crate) fn write_container<M: Serialize>(magic: [u8; 4], meta: &M, tensors: &[&Tensor]) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(meta)?;
    let floats: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(12 + meta.len() + 8 * floats);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Splits a container into its metadata JSON and payload bytes.
pub(crate) fn read_container(bytes: &[u8], magic: [u8; 4]) -> Result<(&[u8], &[u8])> {
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    if bytes[..4] != magic {
        return Err(Error::Checkpoint(format!(
            "magic mismatch: expected {:?}, found {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let meta_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let rest = &bytes[12..];
    if meta_len > rest.len() as u64 {
        return Err(Error::Checkpoint(format!(
            "metadata length {meta_len} exceeds the {} bytes remaining",
            rest.len()
        )));
    }
    Ok(rest.split_at(meta_len as usize))
}

/// Checks a recorded tensor list against the layout a config implies and
/// against the payload size. Runs before anything is allocated.
pub(crate) fn check_layout(
    recorded: &[TensorEntry],
    expected: &[TensorEntry],
    payload: &[u8],
) -> Result<()> {
    if recorded.len() != expected.len() {
        return Err(Error::Shape(format!(
            "checkpoint lists {} tensors, config implies {}",
            recorded.len(),
            expected.len()
        )));
    }
    for (r, e) in recorded.iter().zip(expected) {
        if r != e {
            return Err(Error::Shape(format!(
                "tensor `{}` recorded as {:?}, config expects `{}` {:?}",
                r.name, r.shape, e.name, e.shape
            )));
        }
    }
    let floats = expected
        .iter()
        .try_fold(0usize, |acc, e| {
            e.shape
                .iter()
                .try_fold(1usize, |p, &d| p.checked_mul(d))
                .and_then(|n| acc.checked_add(n))
        })
        .and_then(|n| n.checked_mul(8));
    match floats {
        Some(bytes) if bytes == payload.len() => Ok(()),
        Some(bytes) => Err(Error::Checkpoint(format!(
            "payload is {} bytes, expected {bytes}",
            payload.len()
        ))),
        None => Err(Error::Checkpoint("tensor sizes overflow".into())),
    }
}

/// Copies a payload already accepted by [`check_layout`] into `params`.
pub(crate) fn fill_params<P: ParamSet>(params: &mut P, payload: &[u8]) {
    let mut chunks = payload.chunks_exact(8);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            let c = chunks.next().expect("length checked");
            *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EncoderMeta {
    model: ModelConfig,
    train: TrainConfig,
    version: VersionId,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// A trained encoder together with everything needed to run it on raw records.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCheckpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub version: VersionId,
    pub vocab: Vocabulary,
    pub params: Parameters,
}

impl EncoderCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = EncoderMeta {
            model: self.model_config,
            train: self.train_config,
            version: self.version,
            vocab: self.vocab.tokens().to_vec(),
            tensors: entries_of(&self.params),
        };
        let tensors: Vec<&Tensor> = self.params.tensors().into_iter().map(|(_, t)| t).collect();
        write_container(ENCODER_MAGIC, &meta, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, payload) = read_container(bytes, ENCODER_MAGIC)?;
        let meta: EncoderMeta = serde_json::from_slice(meta)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        meta.model
            .validate()
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let tensor_count = meta.model.num_layers.checked_mul(16).and_then(|n| n.checked_add(4));
        if tensor_count != Some(meta.tensors.len()) {
            return Err(Error::Shape(format!(
                "checkpoint lists {} tensors, a {}-layer config implies {:?}",
                meta.tensors.len(),
                meta.model.num_layers,
                tensor_count
            )));
        }
        check_layout(&meta.tensors, &Parameters::layout(&meta.model), payload)?;
        let vocab = Vocabulary::from_tokens(meta.vocab)?;
        if vocab.len() > meta.model.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary of {} exceeds vocab_size {}",
                vocab.len(),
                meta.model.vocab_size
            )));
        }
        let mut params = Parameters::zeros(&meta.model);
        fill_params(&mut params, payload);
        Ok(EncoderCheckpoint {
            model_config: meta.model,
            train_config: meta.train,
            version: meta.version,
            vocab,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        EncoderCheckpoint::from_bytes(&std::fs::read(path)?)
    }
}
