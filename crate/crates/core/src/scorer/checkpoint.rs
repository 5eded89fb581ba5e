//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `SELFSEG\0`, `u32` format version, `u64` header
//! length, a UTF-8 JSON header (config, vocabulary size and hash, tensor
//! names and shapes), then every tensor as little-endian `f32`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{ScorerConfig, ScorerParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::vocab::SubwordVocab;

const MAGIC: &[u8; 8] = b"SELFSEG\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ScorerConfig,
    vocab_size: usize,
    vocab_hash: String,
    tensors: Vec<TensorMeta>,
}

pub fn to_bytes(params: &ScorerParams) -> Vec<u8> {
    let header = Header {
        config: params.config().clone(),
        vocab_size: params.vocab_size(),
        vocab_hash: params.vocab_hash().to_string(),
        tensors: params
            .names()
            .zip(params.tensors())
            .map(|(name, t)| TensorMeta {
                name: name.to_string(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(24 + json.len() + 4 * params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for &x in &t.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ScorerParams> {
    let corrupt = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let mut data = &body[hlen..];
    let mut named = Vec::with_capacity(header.tensors.len());
    for meta in header.tensors {
        let n = meta.rows * meta.cols;
        if data.len() < 4 * n {
            return Err(Error::Checkpoint(format!("tensor {} is truncated", meta.name)));
        }
        let values = data[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        data = &data[4 * n..];
        named.push((meta.name, Tensor::from_vec(meta.rows, meta.cols, values)));
    }
    if !data.is_empty() {
        return Err(corrupt("trailing bytes after tensors"));
    }
    ScorerParams::from_parts(header.config, header.vocab_size, header.vocab_hash, named)
}

/// Hex SHA-256 of the serialized parameters.
pub fn params_hash(params: &ScorerParams) -> String {
    hex::encode(Sha256::digest(to_bytes(params)))
}

pub fn save_params(params: &ScorerParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&to_bytes(params))?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and verifies it was trained against `vocab`.
pub fn load_params(path: impl AsRef<Path>, vocab: &SubwordVocab) -> Result<ScorerParams> {
    let params = load_params_unchecked(path)?;
    params.check_vocab(vocab)?;
    Ok(params)
}

pub fn load_params_unchecked(path: impl AsRef<Path>) -> Result<ScorerParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (SubwordVocab, ScorerParams) {
        let vocab = SubwordVocab::from_subwords(["a", "b", "ab"]).unwrap();
        let cfg = ScorerConfig {
            model_dim: 4,
            ff_dim: 6,
            heads: 2,
            enc_layers: 1,
            dec_layers: 2,
            ..ScorerConfig::default()
        };
        let params = ScorerParams::init(&cfg, &vocab).unwrap();
        (vocab, params)
    }

    #[test]
    fn round_trip() {
        let (vocab, params) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_params(&params, &path).unwrap();
        let back = load_params(&path, &vocab).unwrap();
        assert_eq!(back, params);
        assert_eq!(params_hash(&back), params_hash(&params));
    }

    #[test]
    fn corrupt_magic() {
        let (_, params) = tiny();
        let mut bytes = to_bytes(&params);
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Checkpoint(_))));
        let bytes = to_bytes(&params);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn vocab_mismatch_names_both_hashes() {
        let (vocab, params) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_params(&params, &path).unwrap();
        let other = SubwordVocab::from_subwords(["a", "b", "ba"]).unwrap();
        let err = load_params(&path, &other).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&vocab.hash()) && msg.contains(&other.hash()), "{msg}");
        assert!(err.is_model_mismatch());
    }
}
