//! Deterministic stand-in encoders for tests and CPU-only runs.

use super::encoder::EncoderClient;
use super::library::humanize_class_name;
use crate::dataset_io::cache::APPEARANCE_DIM;
use crate::error::{Error, Result};
use mvfuse_nn::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Returns the same vector for every input.
pub struct ConstantEncoder {
    pub vector: Vec<f32>,
}

impl EncoderClient for ConstantEncoder {
    fn name(&self) -> String {
        "constant".into()
    }

    fn embed_dim(&self) -> usize {
        self.vector.len()
    }

    fn encode_image(&self, _image: &Tensor) -> Result<Vec<f32>> {
        Ok(self.vector.clone())
    }

    fn encode_text(&self, _text: &str) -> Result<Vec<f32>> {
        Ok(self.vector.clone())
    }
}

const POOL: usize = 8;

/// Average-pools the image to `3 x 8 x 8` and applies a fixed Gaussian
/// projection; text maps to a Gaussian vector seeded by its hash. Linear in
/// the pooled colours, so appearance information survives into the feature.
pub struct RandomProjectionEncoder {
    seed: u64,
    projection: Vec<f32>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl RandomProjectionEncoder {
    pub fn new(seed: u64) -> Self {
        let inputs = 3 * POOL * POOL;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (inputs as f32).sqrt();
        let projection = (0..APPEARANCE_DIM * inputs)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect::<Vec<f32>>();
        Self { seed, projection }
    }
}

/// Adaptive average pooling of `[3, S, S]` to `[3, P, P]`.
fn pool(image: &Tensor) -> Result<Vec<f32>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 || shape[1] < POOL || shape[2] < POOL {
        return Err(Error::Encoder(format!("expected [3, >={POOL}, >={POOL}] image, got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let d = image.data();
    let mut out = vec![0.0f32; 3 * POOL * POOL];
    for c in 0..3 {
        for py in 0..POOL {
            let (y0, y1) = (py * h / POOL, ((py + 1) * h).div_ceil(POOL));
            for px in 0..POOL {
                let (x0, x1) = (px * w / POOL, ((px + 1) * w).div_ceil(POOL));
                let mut s = 0.0f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += d[(c * h + y) * w + x] as f64;
                    }
                }
                out[(c * POOL + py) * POOL + px] = (s / ((y1 - y0) * (x1 - x0)) as f64) as f32;
            }
        }
    }
    Ok(out)
}

impl EncoderClient for RandomProjectionEncoder {
    fn name(&self) -> String {
        format!("random-projection(seed={})", self.seed)
    }

    fn embed_dim(&self) -> usize {
        APPEARANCE_DIM
    }

    fn encode_image(&self, image: &Tensor) -> Result<Vec<f32>> {
        let pooled = pool(image)?;
        let mut out = vec![0.0f32; APPEARANCE_DIM];
        mvfuse_nn::gemm::sgemm(
            1,
            pooled.len(),
            APPEARANCE_DIM,
            &pooled,
            false,
            &self.projection,
            true,
            &mut out,
            false,
        );
        Ok(out)
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(text.as_bytes()));
        Ok((0..APPEARANCE_DIM).map(|_| StandardNormal.sample(&mut rng)).collect())
    }
}

/// Maps images and texts to standard basis vectors: an image goes to `e_j`
/// for the palette colour `j` nearest to its saturated pixels, a text goes to
/// `e_j` for the class name it mentions.
pub struct OrthonormalMockEncoder {
    names: Vec<String>,
    palette: Vec<[u8; 3]>,
}

/// Pixels whose channel spread (on the 0-255 scale) is below this are
/// treated as background.
const SATURATION_THRESHOLD: f32 = 60.0;

impl OrthonormalMockEncoder {
    pub fn new(class_names: &[String], palette: Vec<[u8; 3]>) -> Result<Self> {
        if class_names.len() != palette.len() || class_names.is_empty() || class_names.len() > APPEARANCE_DIM {
            return Err(Error::InvalidArgument(format!(
                "need 1..={APPEARANCE_DIM} classes with one palette colour each, got {} names and {} colours",
                class_names.len(),
                palette.len()
            )));
        }
        let names = class_names.iter().map(|n| humanize_class_name(n).to_lowercase()).collect();
        Ok(Self { names, palette })
    }

    fn basis(j: usize) -> Vec<f32> {
        let mut v = vec![0.0; APPEARANCE_DIM];
        v[j] = 1.0;
        v
    }
}

impl EncoderClient for OrthonormalMockEncoder {
    fn name(&self) -> String {
        "orthonormal-mock".into()
    }

    fn embed_dim(&self) -> usize {
        APPEARANCE_DIM
    }

    fn encode_image(&self, image: &Tensor) -> Result<Vec<f32>> {
        let pre = self.preprocess();
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Encoder(format!("expected [3, S, S] image, got {shape:?}")));
        }
        let n = shape[1] * shape[2];
        let d = image.data();
        let (mut sum, mut count) = ([0.0f64; 3], 0usize);
        for i in 0..n {
            let px: [f32; 3] = std::array::from_fn(|c| (d[c * n + i] * pre.std[c] + pre.mean[c]) * 255.0);
            let spread = px.iter().cloned().fold(f32::MIN, f32::max) - px.iter().cloned().fold(f32::MAX, f32::min);
            if spread >= SATURATION_THRESHOLD {
                for c in 0..3 {
                    sum[c] += px[c] as f64;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Encoder("no coloured pixels to match against the palette".into()));
        }
        let mean = sum.map(|s| s / count as f64);
        let dist = |p: &[u8; 3]| (0..3).map(|c| (mean[c] - p[c] as f64).powi(2)).sum::<f64>();
        let j =
            (0..self.palette.len()).min_by(|&a, &b| dist(&self.palette[a]).total_cmp(&dist(&self.palette[b]))).unwrap();
        Ok(Self::basis(j))
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f32>> {
        let lower = text.to_lowercase();
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| lower.contains(n.as_str()))
            .max_by_key(|(_, n)| n.len())
            .map(|(j, _)| Self::basis(j))
            .ok_or_else(|| Error::Encoder(format!("text `{text}` names no known class")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_deterministic_and_colour_sensitive() {
        let enc = RandomProjectionEncoder::new(3);
        let a = Tensor::full(&[3, 16, 16], 0.2);
        let b = Tensor::full(&[3, 16, 16], -0.2);
        assert_eq!(enc.encode_image(&a).unwrap(), RandomProjectionEncoder::new(3).encode_image(&a).unwrap());
        assert_ne!(enc.encode_image(&a).unwrap(), enc.encode_image(&b).unwrap());
        assert_eq!(enc.encode_text("x").unwrap(), enc.encode_text("x").unwrap());
        assert_ne!(enc.encode_text("x").unwrap(), enc.encode_text("y").unwrap());
    }

    #[test]
    fn orthonormal_mock_reads_class_names() {
        let names = vec!["PlayingDaf".to_string(), "Playing".to_string()];
        let enc = OrthonormalMockEncoder::new(&names, vec![[255, 0, 0], [0, 0, 255]]).unwrap();
        assert_eq!(enc.encode_text("a video of a person playing daf.").unwrap()[0], 1.0);
        assert_eq!(enc.encode_text("a video of a person playing.").unwrap()[1], 1.0);
        assert!(enc.encode_text("nothing").is_err());
    }
}
