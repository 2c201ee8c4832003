//! Segment-based frame selection.
//!
//! A stream of `T` frames is cut into `N` contiguous segments with floor
//! boundaries; segment `k` spans `[kT/N, (k+1)T/N)`. Training draws one
//! frame uniformly per segment, testing takes each segment's centre. When
//! `T < N` some segments are empty and reuse the frame at their boundary
//! (clamped to the last frame), so `N` indices always come back.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const TRAIN_SEGMENTS: usize = 3;
pub const TEST_SEGMENTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    TrainRandom,
    TestCenter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewProtocol {
    pub n_segments: usize,
    pub mode: SamplingMode,
    pub n_spatial_crops: usize,
}

impl ViewProtocol {
    pub fn train() -> Self {
        Self { n_segments: TRAIN_SEGMENTS, mode: SamplingMode::TrainRandom, n_spatial_crops: 1 }
    }

    pub fn test() -> Self {
        Self { n_segments: TEST_SEGMENTS, mode: SamplingMode::TestCenter, n_spatial_crops: 1 }
    }

    pub fn test_with(n_segments: usize) -> Self {
        Self { n_segments, ..Self::test() }
    }

    pub fn views(&self) -> usize {
        self.n_segments * self.n_spatial_crops
    }
}

fn bounds(num_frames: usize, n_segments: usize, k: usize) -> (usize, usize) {
    (k * num_frames / n_segments, (k + 1) * num_frames / n_segments)
}

fn check(num_frames: usize, n_segments: usize) -> Result<()> {
    if num_frames == 0 {
        return Err(Error::InvalidArgument("cannot sample from a video with no frames".into()));
    }
    if n_segments == 0 {
        return Err(Error::InvalidArgument("need at least one segment".into()));
    }
    Ok(())
}

pub fn sample_train_indices(num_frames: usize, n_segments: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    check(num_frames, n_segments)?;
    Ok((0..n_segments)
        .map(|k| {
            let (s, e) = bounds(num_frames, n_segments, k);
            if e > s {
                rng.random_range(s..e)
            } else {
                s.min(num_frames - 1)
            }
        })
        .collect())
}

pub fn sample_test_indices(num_frames: usize, n_segments: usize) -> Result<Vec<usize>> {
    check(num_frames, n_segments)?;
    Ok((0..n_segments)
        .map(|k| {
            let (s, e) = bounds(num_frames, n_segments, k);
            if e > s {
                s + (e - s) / 2
            } else {
                s.min(num_frames - 1)
            }
        })
        .collect())
}

pub fn sample_indices(num_frames: usize, protocol: &ViewProtocol, rng: &mut impl Rng) -> Result<Vec<usize>> {
    match protocol.mode {
        SamplingMode::TrainRandom => sample_train_indices(num_frames, protocol.n_segments, rng),
        SamplingMode::TestCenter => sample_test_indices(num_frames, protocol.n_segments),
    }
}
