//! Deterministic synthetic motion-vector datasets.
//!
//! Each class owns an appearance id (a palette colour painted on an object
//! rectangle in the RGB frames) and a motion id (a pattern of vertical
//! translation, divergence and horizontal shake applied inside the same
//! rectangle of the motion field). Every motion pattern is unchanged in
//! distribution by the horizontal motion-vector flip, so flip augmentation
//! never destroys the class signal.
//!
//! In XOR mode class `c` has appearance id `c / 2` and motion id
//! `(c & 1) ^ ((c >> 1) & 1)`: each modality alone confuses every class with
//! exactly one other, while the pair identifies it.

use super::cache::FeatureKind;
use super::manifest::{class_index_text, ManifestEntry, SplitManifest};
use super::mvt::{encode_mv_frames, MvClip, MvFrame};
use super::write_atomic;
use crate::error::{Error, IoContext, Result};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Distinct motion patterns available (5 speeds x 5 divergences x 5 shakes).
pub const MAX_MOTION_PATTERNS: usize = 125;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub xor: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { classes: 4, per_class: 8, test_per_class: 8, frames: 16, height: 32, width: 32, xor: false, seed: 7 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.classes == 0 || self.per_class == 0 || self.frames == 0 || self.height == 0 || self.width == 0 {
            return bad(format!("all synthetic dataset counts must be at least 1: {self:?}"));
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return bad(format!("frame size {}x{} exceeds 65535", self.height, self.width));
        }
        if self.xor && self.classes % 2 != 0 {
            return bad(format!("XOR mode pairs classes and needs an even count, got {}", self.classes));
        }
        if !self.xor && self.classes > MAX_MOTION_PATTERNS {
            return bad(format!("at most {MAX_MOTION_PATTERNS} classes have distinct motion patterns"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassSignature {
    pub appearance: usize,
    pub motion: usize,
}

pub fn class_signature(class: usize, xor: bool) -> ClassSignature {
    if xor {
        ClassSignature { appearance: class / 2, motion: (class & 1) ^ ((class >> 1) & 1) }
    } else {
        ClassSignature { appearance: class, motion: class }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionPattern {
    /// Vertical translation, pixels per frame.
    pub vertical: f32,
    /// Horizontal and vertical expansion rate across the object.
    pub divergence: f32,
    /// Amplitude of the horizontal oscillation.
    pub shake: f32,
}

/// Pattern of a motion id. XOR datasets use only ids 0 and 1, mapped to the
/// two extreme vertical speeds.
pub fn motion_pattern(motion: usize, xor: bool) -> MotionPattern {
    let k = if xor { motion * 4 } else { motion };
    let (a, b, c) = (k % 5, (k / 5) % 5, k / 25);
    MotionPattern { vertical: -8.0 + 4.0 * a as f32, divergence: -0.4 + 0.2 * b as f32, shake: 3.0 * c as f32 }
}

/// Colour of an appearance id: golden-ratio hue steps at fixed saturation.
pub fn palette_color(appearance: usize) -> [u8; 3] {
    let h = (appearance as f64 * 0.618_033_988_75).fract() * 6.0;
    let (s, v) = (0.8, 0.9);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

pub struct SyntheticVideo {
    pub entry: ManifestEntry,
    pub clip: MvClip,
    pub rgb: Vec<RgbImage>,
    pub signature: ClassSignature,
}

pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub class_names: Vec<String>,
    pub train: SplitManifest,
    pub test: SplitManifest,
    /// Training videos first, then test videos, each in manifest order.
    pub videos: Vec<SyntheticVideo>,
}

/// Metadata written beside a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub generator: String,
    pub xor_mode: bool,
    pub appearance_dim: usize,
    pub motion_dim: usize,
    pub config: SynthConfig,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

fn synth_video(cfg: &SynthConfig, split: u64, class: usize, index: usize) -> Result<(MvClip, Vec<RgbImage>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[split, class as u64, index as u64]));
    let (h, w) = (cfg.height, cfg.width);
    let sig = class_signature(class, cfg.xor);
    let pat = motion_pattern(sig.motion, cfg.xor);
    let ow = ((w as f32 * rng.random_range(0.5..0.9)).round() as usize).clamp(1, w);
    let oh = ((h as f32 * rng.random_range(0.5..0.9)).round() as usize).clamp(1, h);
    let x0 = rng.random_range(0..=w - ow);
    let y0 = rng.random_range(0..=h - oh);
    let (cx, cy) = (x0 as f32 + (ow as f32 - 1.0) / 2.0, y0 as f32 + (oh as f32 - 1.0) / 2.0);
    let gain: f32 = rng.random_range(0.8..1.2);
    let shake_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let period: f32 = rng.random_range(4.0..8.0);
    #[allow(clippy::approx_constant)]
    let (phase, mod_phase): (f32, f32) = (rng.random_range(0.0..6.283), rng.random_range(0.0..6.283));
    let noise = Normal::new(0.0f32, 1.0).unwrap();
    let jitter = Normal::new(0.0f32, 0.5).unwrap();
    let (half_w, half_h) = (w as f32 / 2.0, h as f32 / 2.0);

    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let tf = t as f32;
        let modulation = 1.0 + 0.25 * (std::f32::consts::TAU * tf / period + mod_phase).sin();
        let shake = shake_sign * pat.shake * (std::f32::consts::TAU * tf / period + phase).sin();
        let mut f = MvFrame::zeros(h, w)?;
        for y in 0..h {
            for x in 0..w {
                let inside = (x0..x0 + ow).contains(&x) && (y0..y0 + oh).contains(&y);
                let (dx, dy) = if inside {
                    let u = (x as f32 - cx) / half_w;
                    let v = (y as f32 - cy) / half_h;
                    (
                        gain * (10.0 * pat.divergence * u + shake) + noise.sample(&mut rng),
                        gain * (pat.vertical * modulation + 10.0 * pat.divergence * v) + noise.sample(&mut rng),
                    )
                } else {
                    (jitter.sample(&mut rng), jitter.sample(&mut rng))
                };
                f.set(0, y, x, dx.round().clamp(-127.0, 127.0));
                f.set(1, y, x, dy.round().clamp(-127.0, 127.0));
            }
        }
        frames.push(f);
    }

    let base = palette_color(sig.appearance);
    let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(-12.0..12.0));
    let background: f32 = rng.random_range(90.0..140.0);
    let pix = Normal::new(0.0f32, 6.0).unwrap();
    let mut rgb = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        let mut img = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let inside = (x0..x0 + ow).contains(&x) && (y0..y0 + oh).contains(&y);
                let px: [u8; 3] = std::array::from_fn(|c| {
                    let v = if inside { base[c] as f32 + tint[c] } else { background };
                    (v + pix.sample(&mut rng)).round().clamp(0.0, 255.0) as u8
                });
                img.put_pixel(x as u32, y as u32, Rgb(px));
            }
        }
        rgb.push(img);
    }
    let clip = MvClip::new(String::new(), class, frames)?;
    Ok((clip, rgb))
}

pub fn synthetic_class_name(class: usize) -> String {
    format!("Synth{class:03}")
}

/// Pure function of `cfg`.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let class_names: Vec<String> = (0..cfg.classes).map(synthetic_class_name).collect();
    let mut videos = Vec::new();
    let mut manifests = Vec::new();
    for (split_id, (split, per_class, clip_tag)) in
        [("train", cfg.per_class, 1), ("test", cfg.test_per_class, 2)].into_iter().enumerate()
    {
        let mut entries = Vec::new();
        for (class, name) in class_names.iter().enumerate() {
            for i in 0..per_class {
                let entry = ManifestEntry::new(format!("{name}/v_{name}_g{:02}_c{clip_tag:02}", i + 1), class);
                let (mut clip, rgb) = synth_video(cfg, split_id as u64, class, i)?;
                clip.video_id = entry.video_id.clone();
                entries.push(entry.clone());
                videos.push(SyntheticVideo { entry, clip, rgb, signature: class_signature(class, cfg.xor) });
            }
        }
        manifests.push(SplitManifest::new(split, class_names.clone(), entries)?);
    }
    let test = manifests.pop().unwrap();
    let train = manifests.pop().unwrap();
    Ok(SyntheticDataset { config: cfg.clone(), class_names, train, test, videos })
}

impl SyntheticDataset {
    pub fn info(&self) -> DatasetInfo {
        DatasetInfo {
            generator: "synthetic".into(),
            xor_mode: self.config.xor,
            appearance_dim: FeatureKind::Appearance.dim(),
            motion_dim: FeatureKind::Motion.dim(),
            config: self.config.clone(),
        }
    }

    pub fn video(&self, video_id: &str) -> Option<&SyntheticVideo> {
        self.videos.iter().find(|v| v.entry.video_id == video_id)
    }

    pub fn clips(&self, manifest: &SplitManifest) -> Vec<&MvClip> {
        manifest.entries.iter().filter_map(|e| self.video(&e.video_id).map(|v| &v.clip)).collect()
    }

    /// Writes the dataset in the [`super::DatasetLayout`] structure.
    pub fn write(&self, root: &Path) -> Result<()> {
        let layout = super::DatasetLayout::new(root);
        write_atomic(&layout.class_index_path(), class_index_text(&self.class_names).as_bytes())?;
        self.train.write(&layout.list_path("train"))?;
        self.test.write(&layout.list_path("test"))?;
        let info = toml::to_string(&self.info()).map_err(|e| Error::Config(e.to_string()))?;
        write_atomic(&root.join("dataset.toml"), info.as_bytes())?;
        for v in &self.videos {
            write_atomic(&layout.mv_path(&v.entry.video_id), &encode_mv_frames(&v.clip.frames)?)?;
            let dir = layout.frames_dir(&v.entry.video_id);
            std::fs::create_dir_all(&dir).at(&dir)?;
            for (t, img) in v.rgb.iter().enumerate() {
                let p = dir.join(format!("frame_{:05}.png", t + 1));
                let mut bytes = Vec::new();
                img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
                    .map_err(|e| Error::Image { path: p.clone(), detail: e.to_string() })?;
                write_atomic(&p, &bytes)?;
            }
        }
        Ok(())
    }
}

/// Reads `dataset.toml` if the root was produced by the generator.
pub fn read_dataset_info(root: &Path) -> Result<Option<DatasetInfo>> {
    let p = root.join("dataset.toml");
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).at(&p)?;
    toml::from_str(&text).map(Some).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small(xor: bool) -> SynthConfig {
        SynthConfig { classes: 4, per_class: 2, test_per_class: 1, frames: 3, height: 12, width: 10, xor, seed: 7 }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_dataset(&small(false)).unwrap();
        let b = generate_synthetic_dataset(&small(false)).unwrap();
        assert_eq!(a.train, b.train);
        for (x, y) in a.videos.iter().zip(&b.videos) {
            assert_eq!(x.clip, y.clip);
            assert_eq!(x.rgb, y.rgb);
        }
        let mut other = small(false);
        other.seed = 8;
        let c = generate_synthetic_dataset(&other).unwrap();
        assert_ne!(a.videos[0].clip, c.videos[0].clip);
    }

    #[test]
    fn xor_marginals_are_each_ambiguous_between_two_classes() {
        let sigs: Vec<ClassSignature> = (0..4).map(|c| class_signature(c, true)).collect();
        for c in 0..4 {
            let same_app: BTreeSet<usize> = (0..4).filter(|&d| sigs[d].appearance == sigs[c].appearance).collect();
            let same_mot: BTreeSet<usize> = (0..4).filter(|&d| sigs[d].motion == sigs[c].motion).collect();
            assert_eq!(same_app.len(), 2, "class {c}");
            assert_eq!(same_mot.len(), 2, "class {c}");
            assert_eq!(same_app.intersection(&same_mot).collect::<Vec<_>>(), vec![&c]);
        }
    }

    #[test]
    fn non_xor_signatures_are_distinct() {
        let pats: Vec<_> = (0..MAX_MOTION_PATTERNS).map(|m| motion_pattern(m, false)).collect();
        for i in 0..pats.len() {
            for j in 0..i {
                assert_ne!(pats[i], pats[j]);
            }
        }
        let colors: BTreeSet<[u8; 3]> = (0..101).map(palette_color).collect();
        assert_eq!(colors.len(), 101);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = small(false);
        c.classes = 0;
        assert!(generate_synthetic_dataset(&c).is_err());
        let mut c = small(true);
        c.classes = 3;
        assert!(generate_synthetic_dataset(&c).is_err());
    }

    #[test]
    fn written_tree_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic_dataset(&small(true)).unwrap();
        ds.write(dir.path()).unwrap();
        let layout = crate::dataset_io::DatasetLayout::new(dir.path());
        let train = layout.manifest("train", None).unwrap();
        assert_eq!(train, ds.train);
        let clip = layout.load_clip(&train.entries[1]).unwrap();
        assert_eq!(clip, ds.videos[1].clip);
        assert_eq!(layout.frame_paths(&train.entries[0].video_id).unwrap().len(), 3);
        assert!(read_dataset_info(dir.path()).unwrap().unwrap().xor_mode);
    }
}
