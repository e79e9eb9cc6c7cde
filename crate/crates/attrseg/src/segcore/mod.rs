//! The promptable segmentation model: image encoder producing a feature
//! pyramid, projection MLP, language-aware adapters at selected scales and
//! a two-way-attention mask decoder.

pub mod adapter;
pub mod attn;
pub mod decoder;
pub mod encoder;
pub mod model;
pub mod params;

use thiserror::Error;

pub use adapter::{lam_attention_weights, lam_forward, multi_scale_inject, LevelVar, ScaleSelect};
pub use decoder::{decode_mask, DecoderConfig, MaskLogits};
pub use encoder::{encode_image, EncoderConfig, FeaturePyramid, ImageTensor, PyramidLevel};
pub use model::{ModelConfig, ProjectionActivation, SegModel, TextEmbedding};
pub use params::{CheckpointError, Param, ParamStore, TapeBinding};

#[derive(Debug, Error)]
pub enum SegError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("prompt is empty (k = 0)")]
    EmptyPrompt,
    #[error("embedding width {got} does not match configured width {expected}")]
    WidthMismatch { got: usize, expected: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("configuration error: {0}")]
    Config(String),
}
