//! On-disk formats and dataset layout.
//!
//! * `MVT1`: one motion-vector clip per file ([`mvt`]).
//! * `MCLF`: a flat cache of per-video feature vectors ([`cache`]).
//! * UCF101-style split lists and class index files ([`manifest`]).
//! * A deterministic synthetic dataset generator ([`synth`]).

pub mod cache;
pub mod manifest;
pub mod mvt;
pub mod synth;

pub use cache::{read_feature_cache, write_feature_cache, FeatureCache, FeatureKind, FeatureRecord, FeatureVector};
pub use manifest::{DatasetLayout, ManifestEntry, SplitManifest};
pub use mvt::{read_mv_frames, write_mv_clip, MvClip, MvFrame};
pub use synth::{generate_synthetic_dataset, SynthConfig, SyntheticDataset};

use crate::error::{Error, Result};
use std::path::Path;

/// Little-endian cursor over an in-memory file that reports truncation with
/// the offending offset.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated { path: self.path.to_path_buf(), offset: self.buf.len(), what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Checks a 4-byte magic whose last byte is the format version digit.
    pub(crate) fn magic(&mut self, expected: &'static str) -> Result<()> {
        let m = self.bytes(4, "magic")?;
        if m == expected.as_bytes() {
            return Ok(());
        }
        let path = self.path.to_path_buf();
        let found = String::from_utf8_lossy(m).into_owned();
        if m[..3] == expected.as_bytes()[..3] {
            return Err(Error::VersionMismatch { path, found, expected: expected.to_string() });
        }
        Err(Error::BadMagic { path, found, expected })
    }
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use crate::error::IoContext;
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).at(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).at(dir)?;
    tmp.write_all(bytes).at(path)?;
    tmp.as_file().sync_all().at(path)?;
    tmp.persist(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}
