//! Pretrained CLIP ViT-B/32 behind the [`EncoderClient`] interface.

use super::encoder::EncoderClient;
use super::tokenizer::Tokenizer;
use crate::dataset_io::cache::APPEARANCE_DIM;
use crate::error::{Error, IoContext, Result};
use mvfuse_nn::clip::{TextTower, VisionTower};
use mvfuse_nn::Tensor;
use std::collections::BTreeMap;
use std::path::Path;

pub struct ClipEncoder {
    pub vision: VisionTower,
    pub text: TextTower,
    tokenizer: Tokenizer,
}

impl ClipEncoder {
    pub fn from_parts(weights: &BTreeMap<String, Tensor>, tokenizer: Tokenizer) -> Result<Self> {
        let vision = VisionTower::from_tensors(weights)?;
        let text = TextTower::from_tensors(weights)?;
        for (tower, dim) in [("image", vision.config.embed_dim), ("text", text.config.embed_dim)] {
            if dim != APPEARANCE_DIM {
                return Err(Error::Encoder(format!("{tower} embedding is {dim}-d, expected {APPEARANCE_DIM}")));
            }
        }
        if tokenizer.vocab_size() > text.config.vocab {
            return Err(Error::Encoder(format!(
                "tokenizer has {} entries but the text tower only {}",
                tokenizer.vocab_size(),
                text.config.vocab
            )));
        }
        Ok(Self { vision, text, tokenizer })
    }

    /// Loads f32 safetensors weights with the original OpenAI names plus the
    /// BPE merges file.
    pub fn load(weights: &Path, vocab: &Path) -> Result<Self> {
        let bytes = std::fs::read(weights).at(weights)?;
        let (tensors, _) = mvfuse_nn::state::from_bytes(&bytes)?;
        Self::from_parts(&tensors, Tokenizer::from_file(vocab)?)
    }
}

impl EncoderClient for ClipEncoder {
    fn name(&self) -> String {
        let v = self.vision.config;
        format!("clip-vit(width={}, patch={}, layers={})", v.width, v.patch, v.layers)
    }

    fn embed_dim(&self) -> usize {
        APPEARANCE_DIM
    }

    fn preprocess(&self) -> super::encoder::Preprocess {
        super::encoder::Preprocess { size: self.vision.config.image_size, ..super::encoder::Preprocess::clip() }
    }

    fn encode_image(&self, image: &Tensor) -> Result<Vec<f32>> {
        let s = image.shape().to_vec();
        let batch =
            image.clone().reshape(&[1, s[0], s.get(1).copied().unwrap_or(0), s.get(2).copied().unwrap_or(0)])?;
        Ok(self.vision.encode(&batch)?.into_data())
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f32>> {
        let ids = self.tokenizer.tokenize(text, self.text.config.context);
        Ok(self.text.encode(&[ids])?.into_data())
    }

    fn encode_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let ids: Vec<Vec<u32>> = texts.iter().map(|t| self.tokenizer.tokenize(t, self.text.config.context)).collect();
        let out = self.text.encode(&ids)?;
        Ok((0..texts.len()).map(|i| out.row(i).to_vec()).collect())
    }
}
