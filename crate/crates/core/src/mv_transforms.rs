//! Motion-vector normalisation and spatial augmentation.
//!
//! Spatial transforms run on raw pixel displacements; normalisation comes
//! last. Resizing does not rescale displacement magnitudes.

use crate::dataset_io::MvFrame;
use crate::error::{Error, Result};
use rand::Rng;

/// Scale applied to raw displacements before the 8-bit offset.
pub const MV_SCALE: f32 = 127.5 / 20.0;
pub const MV_OFFSET: f32 = 128.0;

/// Crop scales relative to the shorter side.
pub const CROP_SCALES: [f32; 4] = [1.0, 0.875, 0.75, 0.66];

/// `clamp(x * 127.5/20 + 128, 0, 255) / 255 - 0.5`.
pub fn normalize_value(x: f32) -> f32 {
    (x * MV_SCALE + MV_OFFSET).clamp(0.0, 255.0) / 255.0 - 0.5
}

/// A `[2, H, W]` field with every value in `[-0.5, 0.5]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedMvFrame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl NormalizedMvFrame {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

pub fn normalize_mv(frame: &MvFrame) -> NormalizedMvFrame {
    NormalizedMvFrame {
        height: frame.height(),
        width: frame.width(),
        data: frame.data().iter().map(|&x| normalize_value(x)).collect(),
    }
}

/// Mirrors columns on both channels and negates dx.
pub fn hflip_mv(frame: &MvFrame) -> MvFrame {
    let (h, w) = (frame.height(), frame.width());
    let mut out = frame.clone();
    let src = frame.data();
    let dst = out.data_mut();
    for c in 0..2 {
        for y in 0..h {
            let row = (c * h + y) * w;
            for x in 0..w {
                let v = src[row + w - 1 - x];
                dst[row + x] = if c == 0 { -v } else { v };
            }
        }
    }
    out
}

/// A square crop window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub y0: usize,
    pub x0: usize,
    pub side: usize,
}

impl CropWindow {
    pub fn center(height: usize, width: usize) -> Self {
        let side = height.min(width);
        Self { y0: (height - side) / 2, x0: (width - side) / 2, side }
    }

    /// Draws a scale from [`CROP_SCALES`] and one of the four corners or the
    /// centre.
    pub fn sample_multiscale(height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let short = height.min(width);
        let scale = CROP_SCALES[rng.random_range(0..CROP_SCALES.len())];
        let side = ((short as f32 * scale).round() as usize).clamp(1, short);
        let (my, mx) = (height - side, width - side);
        let (y0, x0) = match rng.random_range(0..5) {
            0 => (0, 0),
            1 => (0, mx),
            2 => (my, 0),
            3 => (my, mx),
            _ => (my / 2, mx / 2),
        };
        Self { y0, x0, side }
    }
}

/// Source coordinates and weights of a half-pixel-centred bilinear resize
/// along one axis.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f32 / out_len as f32;
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f32);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

/// Crops `window` and resizes it to `out_size` squared, bilinearly per channel.
pub fn crop_resize(frame: &MvFrame, window: CropWindow, out_size: usize) -> Result<MvFrame> {
    let (h, w) = (frame.height(), frame.width());
    if out_size == 0 {
        return Err(Error::InvalidArgument("output size must be at least 1".into()));
    }
    if window.side == 0 || window.y0 + window.side > h || window.x0 + window.side > w {
        return Err(Error::InvalidArgument(format!("crop {window:?} outside a {h}x{w} field")));
    }
    let taps = axis_taps(window.side, out_size);
    let mut out = vec![0.0; 2 * out_size * out_size];
    for c in 0..2 {
        for (oy, &(y0, y1, fy)) in taps.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in taps.iter().enumerate() {
                let at = |y: usize, x: usize| frame.get(c, window.y0 + y, window.x0 + x);
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                out[(c * out_size + oy) * out_size + ox] = top + (bottom - top) * fy;
            }
        }
    }
    MvFrame::new(out_size, out_size, out)
}

pub fn multiscale_crop(frame: &MvFrame, out_size: usize, rng: &mut impl Rng) -> Result<MvFrame> {
    let window = CropWindow::sample_multiscale(frame.height(), frame.width(), rng);
    crop_resize(frame, window, out_size)
}

pub fn center_crop_resize(frame: &MvFrame, out_size: usize) -> Result<MvFrame> {
    crop_resize(frame, CropWindow::center(frame.height(), frame.width()), out_size)
}

/// Spatial augmentation shared by every segment of one training clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipAugment {
    pub window: CropWindow,
    pub flip: bool,
}

impl ClipAugment {
    pub fn sample(height: usize, width: usize, flip_prob: f64, rng: &mut impl Rng) -> Self {
        let window = CropWindow::sample_multiscale(height, width, rng);
        Self { window, flip: rng.random_bool(flip_prob) }
    }

    /// Crop, optional flip, then normalisation.
    pub fn apply(&self, frame: &MvFrame, out_size: usize) -> Result<NormalizedMvFrame> {
        let cropped = crop_resize(frame, self.window, out_size)?;
        Ok(normalize_mv(&if self.flip { hflip_mv(&cropped) } else { cropped }))
    }
}

/// Evaluation view: centre crop, resize, normalise.
pub fn eval_view(frame: &MvFrame, out_size: usize) -> Result<NormalizedMvFrame> {
    Ok(normalize_mv(&center_crop_resize(frame, out_size)?))
}
