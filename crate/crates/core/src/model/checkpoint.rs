//! Binary checkpoint format:
//!
//! ```text
//! b"AGCN" | version: u32 LE | metadata length: u64 LE | metadata JSON | f32 LE payload
//! ```
//!
//! The metadata holds the hyperparameters, the vocabulary hash (and optionally
//! its tokens) and a manifest of tensor names, shapes and payload offsets.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AgcnnModel, HyperParams};
use crate::data::Vocabulary;

pub const MAGIC: &[u8; 4] = b"AGCN";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("invalid checkpoint metadata: {0}")]
    Metadata(String),
    #[error("tensor manifest does not match the hyperparameters: {0}")]
    ManifestMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub hyperparams: HyperParams,
    pub vocab_hash: String,
    pub vocab_size: usize,
    #[serde(default)]
    pub vocab_tokens: Option<Vec<String>>,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: AgcnnModel,
    pub vocab: Option<Vocabulary>,
}

/// Raised, not fatal, when a checkpoint was trained on another vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabWarning {
    pub stored: String,
    pub current: String,
}

impl std::fmt::Display for VocabWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "checkpoint vocabulary hash {} differs from current vocabulary {}",
            short(&self.stored),
            short(&self.current)
        )
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

impl Checkpoint {
    pub fn check_vocab(&self, current: &Vocabulary) -> Option<VocabWarning> {
        (self.model.vocab_hash != current.hash()).then(|| VocabWarning {
            stored: self.model.vocab_hash.clone(),
            current: current.hash().to_string(),
        })
    }
}

/// Serializes `model` (and optionally its vocabulary) to bytes.
pub fn encode_checkpoint(model: &AgcnnModel, vocab: Option<&Vocabulary>) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, t) in model.params() {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let meta = CheckpointMeta {
        hyperparams: model.hp.clone(),
        vocab_hash: model.vocab_hash.clone(),
        vocab_size: model.vocab_size(),
        vocab_tokens: vocab.map(|v| v.tokens().to_vec()),
        tensors,
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

/// Writes the checkpoint atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint(
    model: &AgcnnModel,
    vocab: Option<&Vocabulary>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bytes = encode_checkpoint(model, vocab);
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(&bytes).map_err(io)?;
    file.sync_all().map_err(io)?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let need = |needed: usize| {
        if bytes.len() < needed {
            Err(CheckpointError::Truncated {
                needed,
                found: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(MAGIC.len())?;
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic(bytes[..4].to_vec()));
    }
    need(HEADER_LEN)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let meta_end = usize::try_from(meta_len)
        .ok()
        .and_then(|l| l.checked_add(HEADER_LEN))
        .ok_or_else(|| CheckpointError::Metadata(format!("metadata length {meta_len} overflows")))?;
    need(meta_end)?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| CheckpointError::Metadata(e.to_string()))?;

    let mut model = AgcnnModel::init(&meta.hyperparams, meta.vocab_size, 0)
        .map_err(|e| CheckpointError::ManifestMismatch(e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> =
        model.params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    if expected.len() != meta.tensors.len() {
        return Err(CheckpointError::ManifestMismatch(format!(
            "expected {} tensors, manifest lists {}",
            expected.len(),
            meta.tensors.len()
        )));
    }
    let mut offset = 0;
    for ((name, shape), entry) in expected.iter().zip(&meta.tensors) {
        if *name != entry.name || *shape != entry.shape || entry.offset != offset {
            return Err(CheckpointError::ManifestMismatch(format!(
                "expected {name} {shape:?} at {offset}, found {} {:?} at {}",
                entry.name, entry.shape, entry.offset
            )));
        }
        offset += shape.iter().product::<usize>();
    }
    let payload_end = meta_end + offset * 4;
    need(payload_end)?;
    if bytes.len() > payload_end {
        return Err(CheckpointError::ManifestMismatch(format!(
            "{} trailing bytes after the payload",
            bytes.len() - payload_end
        )));
    }
    let mut floats = bytes[meta_end..payload_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    for t in model.params_mut() {
        for v in t.data_mut() {
            *v = floats.next().expect("payload length checked");
        }
    }
    model.vocab_hash = meta.vocab_hash.clone();
    if let Some(tokens) = &meta.vocab_tokens {
        if tokens.len() != meta.vocab_size {
            return Err(CheckpointError::ManifestMismatch(format!(
                "{} vocabulary tokens for {} embedding rows",
                tokens.len(),
                meta.vocab_size
            )));
        }
    }
    let vocab = meta
        .vocab_tokens
        .map(|tokens| Vocabulary::from_parts(tokens, meta.vocab_hash.clone()));
    Ok(Checkpoint { model, vocab })
}
