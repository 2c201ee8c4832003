//! `MVT1` motion-vector clip files.
//!
//! Layout (little-endian): `"MVT1"`, `H: u16`, `W: u16`, `frames: u32`, then
//! per frame the dx plane followed by the dy plane, row-major `i16`. The
//! file carries no id or label; those come from the split manifest.

use super::{write_atomic, Reader};
use crate::error::{Error, IoContext, Result};
use std::path::Path;

pub const MVT_MAGIC: &str = "MVT1";
const HEADER_LEN: usize = 12;

/// One dense motion-vector field, stored as `[2, H, W]` (dx plane, dy plane)
/// in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MvFrame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl MvFrame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("empty motion field {height}x{width}")));
        }
        if data.len() != 2 * height * width {
            return Err(Error::DimensionMismatch { expected: 2 * height * width, found: data.len() });
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; 2 * height * width])
    }

    /// A field with the same displacement at every pixel.
    pub fn uniform(height: usize, width: usize, dx: f32, dy: f32) -> Result<Self> {
        let n = height * width;
        let mut data = vec![dx; 2 * n];
        data[n..].fill(dy);
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn dx(&self) -> &[f32] {
        &self.data[..self.height * self.width]
    }

    pub fn dy(&self) -> &[f32] {
        &self.data[self.height * self.width..]
    }

    /// Channel 0 is dx, channel 1 is dy.
    pub fn get(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, channel: usize, y: usize, x: usize, v: f32) {
        self.data[(channel * self.height + y) * self.width + x] = v;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MvClip {
    pub video_id: String,
    pub label: usize,
    pub frames: Vec<MvFrame>,
}

impl MvClip {
    pub fn new(video_id: impl Into<String>, label: usize, frames: Vec<MvFrame>) -> Result<Self> {
        let clip = Self { video_id: video_id.into(), label, frames };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("clip `{}` has no frames", self.video_id)))?;
        if let Some(f) = self.frames.iter().find(|f| (f.height, f.width) != (first.height, first.width)) {
            return Err(Error::InvalidArgument(format!(
                "clip `{}` mixes frame sizes {}x{} and {}x{}",
                self.video_id, first.height, first.width, f.height, f.width
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.frames[0].height, self.frames[0].width)
    }
}

/// Encodes frames to `MVT1` bytes. Values must be integers in `i16` range.
pub fn encode_mv_frames(frames: &[MvFrame]) -> Result<Vec<u8>> {
    let first = frames.first().ok_or_else(|| Error::InvalidArgument("no frames to write".into()))?;
    let (h, w) = (first.height, first.width);
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("frame size {h}x{w} exceeds 65535")));
    }
    let count = u32::try_from(frames.len()).map_err(|_| Error::InvalidArgument("too many frames".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * 4 * h * w);
    out.extend_from_slice(MVT_MAGIC.as_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for f in frames {
        if (f.height, f.width) != (h, w) {
            return Err(Error::InvalidArgument("frames differ in size".into()));
        }
        for &v in &f.data {
            if v.fract() != 0.0 || !(i16::MIN as f32..=i16::MAX as f32).contains(&v) {
                return Err(Error::InvalidArgument(format!("displacement {v} is not representable as i16")));
            }
            out.extend_from_slice(&(v as i16).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_mv_clip(clip: &MvClip, path: &Path) -> Result<()> {
    clip.validate()?;
    write_atomic(path, &encode_mv_frames(&clip.frames)?)
}

pub fn decode_mv_frames(buf: &[u8], path: &Path) -> Result<Vec<MvFrame>> {
    let mut r = Reader::new(buf, path);
    r.magic(MVT_MAGIC)?;
    let h = r.u16("height")? as usize;
    let w = r.u16("width")? as usize;
    let n = r.u32("frame count")? as usize;
    if h == 0 || w == 0 || n == 0 {
        return Err(Error::Malformed { path: path.to_path_buf(), detail: format!("empty clip {n}x{h}x{w}") });
    }
    let mut frames = Vec::with_capacity(n.min(r.remaining() / (4 * h * w) + 1));
    for _ in 0..n {
        let raw = r.bytes(4 * h * w, "frame data")?;
        let data = raw.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f32).collect();
        frames.push(MvFrame { height: h, width: w, data });
    }
    if r.remaining() != 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes after the last frame", r.remaining()),
        });
    }
    Ok(frames)
}

pub fn read_mv_frames(path: &Path) -> Result<Vec<MvFrame>> {
    let buf = std::fs::read(path).at(path)?;
    decode_mv_frames(&buf, path)
}

/// Reads a clip and attaches the id and label known from its manifest entry.
pub fn read_mv_clip(path: &Path, video_id: &str, label: usize) -> Result<MvClip> {
    MvClip::new(video_id, label, read_mv_frames(path)?)
}
