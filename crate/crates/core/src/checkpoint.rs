//! Versioned checkpoint container: safetensors weights plus a JSON header
//! carrying a format tag, a version number and stage-specific metadata.

use crate::dataset_io::write_atomic;
use crate::error::{Error, IoContext, Result};
use mvfuse_nn::Tensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format: String,
    version: u32,
    body: M,
}

pub fn encode_checkpoint<M: Serialize>(format: &str, tensors: &BTreeMap<String, Tensor>, body: &M) -> Result<Vec<u8>> {
    let env = Envelope { format: format.to_string(), version: CHECKPOINT_VERSION, body };
    let meta = serde_json::to_string(&env).map_err(|e| Error::Config(e.to_string()))?;
    Ok(mvfuse_nn::state::to_bytes(tensors, &meta)?)
}

pub fn save_checkpoint<M: Serialize>(
    path: &Path,
    format: &str,
    tensors: &BTreeMap<String, Tensor>,
    body: &M,
) -> Result<()> {
    write_atomic(path, &encode_checkpoint(format, tensors, body)?)
}

pub fn decode_checkpoint<M: DeserializeOwned>(
    buf: &[u8],
    format: &str,
    path: &Path,
) -> Result<(BTreeMap<String, Tensor>, M)> {
    let malformed = |detail: String| Error::Malformed { path: path.to_path_buf(), detail };
    let (tensors, meta) = mvfuse_nn::state::from_bytes(buf).map_err(|e| malformed(e.to_string()))?;
    let meta = meta.ok_or_else(|| malformed("checkpoint header has no metadata".into()))?;
    let head: Envelope<serde_json::Value> = serde_json::from_str(&meta).map_err(|e| malformed(e.to_string()))?;
    if head.format != format {
        return Err(malformed(format!("checkpoint format `{}`, expected `{format}`", head.format)));
    }
    if head.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: head.version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let body = serde_json::from_value(head.body).map_err(|e| malformed(e.to_string()))?;
    Ok((tensors, body))
}

pub fn load_checkpoint<M: DeserializeOwned>(path: &Path, format: &str) -> Result<(BTreeMap<String, Tensor>, M)> {
    let buf = std::fs::read(path).at(path)?;
    decode_checkpoint(&buf, format, path)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let buf = std::fs::read(path).at(path)?;
    Ok(hex::encode(Sha256::digest(&buf)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Body {
        epoch: usize,
    }

    #[test]
    fn round_trip_and_header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.safetensors");
        let mut t = BTreeMap::new();
        t.insert("w".to_string(), Tensor::from_vec(&[2], vec![1.5, -0.0]).unwrap());
        save_checkpoint(&path, "demo", &t, &Body { epoch: 3 }).unwrap();
        let (back, body): (_, Body) = load_checkpoint(&path, "demo").unwrap();
        assert_eq!(body, Body { epoch: 3 });
        assert_eq!(back["w"].data()[1].to_bits(), (-0.0f32).to_bits());
        assert!(matches!(load_checkpoint::<Body>(&path, "other"), Err(Error::Malformed { .. })));

        let meta = serde_json::json!({"format": "demo", "version": 9, "body": {"epoch": 1}}).to_string();
        std::fs::write(&path, mvfuse_nn::state::to_bytes(&t, &meta).unwrap()).unwrap();
        assert!(matches!(load_checkpoint::<Body>(&path, "demo"), Err(Error::VersionMismatch { .. })));
        std::fs::write(&path, b"junk").unwrap();
        assert!(matches!(load_checkpoint::<Body>(&path, "demo"), Err(Error::Malformed { .. })));
    }
}
