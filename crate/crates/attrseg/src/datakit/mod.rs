//! Dataset tooling: manifests, the mask codec, Q-A step-1 simulation,
//! category mixing, the split-leakage check and the synthetic benchmark
//! generator.

pub mod manifest;
pub mod mask;
pub mod qa;
pub mod rle;
pub mod sampler;
pub mod synth;
pub mod validate;

pub use manifest::{Category, Manifest, MaskRef, SampleRecord};
pub use rle::{decode_mask, encode_mask, RleMask};
pub use validate::validate_split;
