//! A small, deterministic f32 layer engine.
//!
//! Just enough machinery to train an EfficientNet-B0 feature extractor and
//! small MLP heads on the CPU, and to run the CLIP ViT-B/32 image and text
//! towers for inference. Batch-level work is spread over rayon when the
//! `parallel` feature is on; every reduction runs in a fixed order so results
//! are bit-identical with or without it.

pub mod arch;
pub mod clip;
pub mod efficientnet;
pub mod gemm;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod par;
pub mod param;
pub mod state;
pub mod tensor;

pub use param::{Param, ParamKind, Parameterized};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
