//! `MCLF` feature cache files.
//!
//! Layout (little-endian): `"MCLF"`, `version: u32 = 1`, `dim: u32`,
//! `count: u64`, then per record `id_len: u16`, UTF-8 id, `label: u16` and
//! `dim` f32 values.

use super::{write_atomic, Reader};
use crate::error::{Error, IoContext, Result};
use std::collections::{HashMap, HashSet};
use std::path::Path;

pub const MCLF_MAGIC: &str = "MCLF";
pub const MCLF_VERSION: u32 = 1;

pub const APPEARANCE_DIM: usize = 512;
pub const MOTION_DIM: usize = 1280;
pub const FUSED_DIM: usize = APPEARANCE_DIM + MOTION_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Appearance,
    Motion,
    Fused,
}

impl FeatureKind {
    pub const fn dim(self) -> usize {
        match self {
            Self::Appearance => APPEARANCE_DIM,
            Self::Motion => MOTION_DIM,
            Self::Fused => FUSED_DIM,
        }
    }

    pub fn from_dim(dim: usize) -> Option<Self> {
        [Self::Appearance, Self::Motion, Self::Fused].into_iter().find(|k| k.dim() == dim)
    }
}

/// An embedding whose length is fixed by its kind.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    kind: FeatureKind,
    values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(kind: FeatureKind, values: Vec<f32>) -> Result<Self> {
        if values.len() != kind.dim() {
            return Err(Error::DimensionMismatch { expected: kind.dim(), found: values.len() });
        }
        Ok(Self { kind, values })
    }

    pub fn zeros(kind: FeatureKind) -> Self {
        Self { kind, values: vec![0.0; kind.dim()] }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub video_id: String,
    pub label: usize,
    pub feature: FeatureVector,
}

pub fn encode_feature_cache(records: &[FeatureRecord], kind: FeatureKind) -> Result<Vec<u8>> {
    let dim = kind.dim();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(20 + records.len() * (dim * 4 + 32));
    out.extend_from_slice(MCLF_MAGIC.as_bytes());
    out.extend_from_slice(&MCLF_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        if r.feature.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: r.feature.dim() });
        }
        if !seen.insert(r.video_id.as_str()) {
            return Err(Error::DuplicateId(r.video_id.clone()));
        }
        let id_len = u16::try_from(r.video_id.len())
            .map_err(|_| Error::InvalidArgument(format!("video id `{}` longer than 65535 bytes", r.video_id)))?;
        let label = u16::try_from(r.label)
            .map_err(|_| Error::InvalidArgument(format!("label {} does not fit in u16", r.label)))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(r.video_id.as_bytes());
        out.extend_from_slice(&label.to_le_bytes());
        for v in r.feature.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes the records atomically. All records must share one feature kind.
pub fn write_feature_cache(records: &[FeatureRecord], path: &Path) -> Result<()> {
    let kind = records
        .first()
        .map(|r| r.feature.kind())
        .ok_or_else(|| Error::InvalidArgument("cannot infer feature kind of an empty cache".into()))?;
    if let Some(r) = records.iter().find(|r| r.feature.kind() != kind) {
        return Err(Error::DimensionMismatch { expected: kind.dim(), found: r.feature.dim() });
    }
    write_atomic(path, &encode_feature_cache(records, kind)?)
}

pub fn decode_feature_cache(buf: &[u8], path: &Path) -> Result<FeatureCache> {
    let malformed = |detail: String| Error::Malformed { path: path.to_path_buf(), detail };
    let mut r = Reader::new(buf, path);
    r.magic(MCLF_MAGIC)?;
    let version = r.u32("version")?;
    if version != MCLF_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version.to_string(),
            expected: MCLF_VERSION.to_string(),
        });
    }
    let dim = r.u32("dim")? as usize;
    let kind = FeatureKind::from_dim(dim).ok_or_else(|| malformed(format!("unsupported feature dim {dim}")))?;
    let count = r.u64("count")?;
    let mut records = Vec::new();
    for _ in 0..count {
        let id_len = r.u16("id length")? as usize;
        let id = std::str::from_utf8(r.bytes(id_len, "video id")?)
            .map_err(|e| malformed(format!("video id is not UTF-8: {e}")))?
            .to_string();
        let label = r.u16("label")? as usize;
        let values = r
            .bytes(4 * dim, "feature values")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(FeatureRecord { video_id: id, label, feature: FeatureVector { kind, values } });
    }
    if r.remaining() != 0 {
        return Err(malformed(format!("{} trailing bytes after {count} records", r.remaining())));
    }
    FeatureCache::new(kind, records)
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureCache> {
    let buf = std::fs::read(path).at(path)?;
    decode_feature_cache(&buf, path)
}

/// Records in file order plus an id index.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCache {
    pub kind: FeatureKind,
    pub records: Vec<FeatureRecord>,
    index: HashMap<String, usize>,
}

impl FeatureCache {
    pub fn new(kind: FeatureKind, records: Vec<FeatureRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.feature.kind() != kind {
                return Err(Error::DimensionMismatch { expected: kind.dim(), found: r.feature.dim() });
            }
            if index.insert(r.video_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.video_id.clone()));
            }
        }
        Ok(Self { kind, records, index })
    }

    pub fn get(&self, video_id: &str) -> Option<&FeatureRecord> {
        self.index.get(video_id).map(|&i| &self.records[i])
    }

    pub fn require(&self, video_id: &str) -> Result<&FeatureRecord> {
        self.get(video_id).ok_or_else(|| Error::CacheMiss(video_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Hex SHA-256 of the cache's `MCLF` encoding.
    pub fn digest(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        Ok(hex::encode(Sha256::digest(encode_feature_cache(&self.records, self.kind)?)))
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
