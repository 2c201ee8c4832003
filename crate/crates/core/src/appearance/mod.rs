//! Frozen appearance branch: representative-frame embedding, the prompt
//! ensembled class library, zero-shot scoring and the feature cache.

pub mod clip;
pub mod encoder;
pub mod library;
pub mod mock;
pub mod tokenizer;

pub use encoder::{l2_normalize, EncoderClient, Preprocess};
pub use library::{build_text_library, default_templates, ClassTextLibrary};

use crate::dataset_io::cache::{write_feature_cache, FeatureCache, FeatureKind, FeatureRecord, FeatureVector};
use crate::dataset_io::manifest::{load_rgb, DatasetLayout, ManifestEntry, SplitManifest};
use crate::dataset_io::synth::SyntheticDataset;
use crate::error::{Error, Result};
use image::RgbImage;
use mvfuse_nn::loss::argmax;
use std::path::Path;

/// CLIP's learned logit scale, used to turn cosine scores into probabilities.
pub const ZERO_SHOT_LOGIT_SCALE: f32 = 100.0;

/// The middle frame.
pub fn select_representative_frame(num_frames: usize) -> Result<usize> {
    if num_frames == 0 {
        return Err(Error::InvalidArgument("video has no frames".into()));
    }
    Ok(num_frames / 2)
}

pub fn encode_appearance(frame: &RgbImage, encoder: &dyn EncoderClient) -> Result<FeatureVector> {
    let pre = encoder.preprocess().apply(frame)?;
    FeatureVector::new(FeatureKind::Appearance, encoder.encode_image(&pre)?)
}

/// Cosine similarity against every class row; ties go to the lowest index.
pub fn zero_shot_classify(f_app: &[f32], library: &ClassTextLibrary) -> Result<(usize, Vec<f32>)> {
    if f_app.len() != library.dim {
        return Err(Error::DimensionMismatch { expected: library.dim, found: f_app.len() });
    }
    let u = l2_normalize(f_app)?;
    let scores: Vec<f32> = (0..library.num_classes())
        .map(|c| library.row(c).iter().zip(&u).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>() as f32)
        .collect();
    Ok((argmax(&scores), scores))
}

/// Source of the representative RGB frame of a video.
pub trait FrameSource: Sync {
    fn representative_frame(&self, entry: &ManifestEntry) -> Result<RgbImage>;
}

impl FrameSource for DatasetLayout {
    fn representative_frame(&self, entry: &ManifestEntry) -> Result<RgbImage> {
        let paths = self.frame_paths(&entry.video_id)?;
        load_rgb(&paths[select_representative_frame(paths.len())?])
    }
}

impl FrameSource for SyntheticDataset {
    fn representative_frame(&self, entry: &ManifestEntry) -> Result<RgbImage> {
        let v = self.video(&entry.video_id).ok_or_else(|| Error::MissingVideo(entry.video_id.clone()))?;
        Ok(v.rgb[select_representative_frame(v.rgb.len())?].clone())
    }
}

/// Embeds every video's representative frame, in manifest order.
pub fn compute_appearance_features(
    manifest: &SplitManifest,
    source: &dyn FrameSource,
    encoder: &dyn EncoderClient,
) -> Result<Vec<FeatureRecord>> {
    mvfuse_nn::par::map_slice(&manifest.entries, |_, e| {
        let frame = source.representative_frame(e)?;
        Ok(FeatureRecord { video_id: e.video_id.clone(), label: e.label, feature: encode_appearance(&frame, encoder)? })
    })
    .into_iter()
    .collect()
}

/// Computes all features first and writes the cache only if every video
/// succeeded, so a failed run leaves no file behind.
pub fn precompute_cache(
    manifest: &SplitManifest,
    source: &dyn FrameSource,
    encoder: &dyn EncoderClient,
    out_path: &Path,
) -> Result<FeatureCache> {
    let records = compute_appearance_features(manifest, source, encoder)?;
    if records.is_empty() {
        return Err(Error::InvalidArgument("manifest is empty".into()));
    }
    write_feature_cache(&records, out_path)?;
    FeatureCache::new(FeatureKind::Appearance, records)
}
