//! Two-stream late-fusion video recognition over compressed-domain motion
//! vectors and a frozen image-text encoder.
//!
//! The appearance pathway embeds one representative RGB frame per video and
//! classifies zero-shot against prompt-ensembled class text embeddings. The
//! motion pathway runs a 2-channel EfficientNet-B0 over TSN-sampled motion
//! vector frames. A small MLP over the concatenated features is trained with
//! both extractors frozen.

pub mod appearance;
pub mod checkpoint;
pub mod config;
pub mod cost_accounting;
pub mod dataset_io;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod motion;
pub mod mv_transforms;
pub mod temporal_sampler;

pub use error::{Error, Result};
