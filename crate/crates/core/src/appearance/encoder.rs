//! The frozen image/text encoder interface and its canonical preprocessing.

use crate::error::{Error, Result};
use image::imageops::FilterType;
use image::RgbImage;
use mvfuse_nn::Tensor;

/// Resize-crop-normalise settings of an encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preprocess {
    pub size: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Preprocess {
    /// Published CLIP constants.
    pub fn clip() -> Self {
        Self {
            size: 224,
            mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
            std: [0.268_629_54, 0.261_302_6, 0.275_777_1],
        }
    }

    /// Bicubic resize of the shorter side to `size`, centre crop to
    /// `size x size`, scale to `[0, 1]`, per-channel standardisation.
    /// Returns `[3, size, size]`.
    pub fn apply(&self, img: &RgbImage) -> Result<Tensor> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument("empty image".into()));
        }
        let s = self.size;
        let (nw, nh) = if w <= h { (s, (s * h / w).max(s)) } else { ((s * w / h).max(s), s) };
        let resized = if (nw, nh) == (w, h) {
            img.clone()
        } else {
            image::imageops::resize(img, nw as u32, nh as u32, FilterType::CatmullRom)
        };
        let top = ((nh - s) as f64 / 2.0).round_ties_even() as usize;
        let left = ((nw - s) as f64 / 2.0).round_ties_even() as usize;
        let mut out = vec![0.0f32; 3 * s * s];
        for y in 0..s {
            for x in 0..s {
                let p = resized.get_pixel((left + x) as u32, (top + y) as u32).0;
                for c in 0..3 {
                    out[(c * s + y) * s + x] = (p[c] as f32 / 255.0 - self.mean[c]) / self.std[c];
                }
            }
        }
        Ok(Tensor::from_vec(&[3, s, s], out)?)
    }
}

/// A frozen image-text embedding model.
///
/// Implementations must be deterministic and safe for concurrent read-only
/// use.
pub trait EncoderClient: Send + Sync {
    fn name(&self) -> String;

    fn embed_dim(&self) -> usize;

    fn preprocess(&self) -> Preprocess {
        Preprocess::clip()
    }

    /// Embeds one preprocessed `[3, S, S]` image.
    fn encode_image(&self, image: &Tensor) -> Result<Vec<f32>>;

    fn encode_text(&self, text: &str) -> Result<Vec<f32>>;

    fn encode_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        mvfuse_nn::par::map_slice(texts, |_, t| self.encode_text(t)).into_iter().collect()
    }

    /// Always true: encoders are never trained here.
    fn is_frozen(&self) -> bool {
        true
    }
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Unit-length copy of `v`; fails on a zero vector.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidArgument(format!("cannot normalise a vector of norm {n}")));
    }
    Ok(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn output_is_square_and_standardised() {
        let img = RgbImage::from_pixel(40, 30, Rgb([255, 0, 128]));
        let p = Preprocess { size: 16, ..Preprocess::clip() };
        let t = p.apply(&img).unwrap();
        assert_eq!(t.shape(), &[3, 16, 16]);
        let r = (1.0 - p.mean[0]) / p.std[0];
        assert!(t.data()[..256].iter().all(|&v| (v - r).abs() < 1e-5));
        let g = (0.0 - p.mean[1]) / p.std[1];
        assert!(t.data()[256..512].iter().all(|&v| (v - g).abs() < 1e-5));
    }

    #[test]
    fn crop_is_centred_on_the_long_axis() {
        // Left half black, right half white: the centre crop keeps both.
        let img = RgbImage::from_fn(32, 16, |x, _| if x < 16 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
        let p = Preprocess { size: 16, mean: [0.0; 3], std: [1.0; 3] };
        let t = p.apply(&img).unwrap();
        let row = &t.data()[..16];
        assert!(row[0] < 0.01 && row[15] > 0.99);
        assert!(row[..8].iter().sum::<f32>() < row[8..].iter().sum::<f32>());
    }

    #[test]
    fn zero_vector_cannot_be_normalised() {
        assert!(l2_normalize(&[0.0, 0.0]).is_err());
        let u = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-7 && (u[1] - 0.8).abs() < 1e-7);
    }
}
