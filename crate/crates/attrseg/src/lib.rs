//! Attribute-prompted reasoning segmentation.
//!
//! The pipeline: a chain-of-thought prompting protocol runs against a
//! multimodal language-model backend and distills a user query into a short
//! target name plus image-specific visual attributes (color, shape, relative
//! position). Token embeddings for that text prompt a small multi-scale
//! segmentation model whose language-aware cross-attention adapters and
//! two-way-attention decoder are the only trainable parts; the image encoder
//! stays frozen. Training, evaluation metrics (gIoU, cIoU, ROUGE-L, CIDEr),
//! dataset tooling and a CLI round out the kit.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run -p attrseg --release --example chain_demo      # CoT chain on a scripted scene
//! cargo run -p attrseg --release --example infer_demo      # query -> chain -> mask + overlay
//! cargo run -p attrseg --release --example synth_preview   # synthetic scenes + ground truth
//! cargo run -p attrseg --release --example train_overfit   # tiny end-to-end training run
//! cargo run -p attrseg --release --example metrics_demo    # worked metric computations
//! cargo run -p attrseg --release --example remote_stub     # remote backend over a loopback stub
//! cargo run -p attrseg --release --example ablate_mini     # miniature ablation report
//! ```
//!
//! The same capabilities are exposed by the `attrseg` binary
//! (`infer`, `train`, `eval`, `ablate`, `make-synth`, `cache-traces`).

pub mod backend;
pub mod bundle;
pub mod cli;
pub mod datakit;
pub mod hash;
pub mod metrics;
pub mod orchestrator;
pub mod raster;
pub mod rng;
pub mod segcore;
pub mod tensor;
pub mod training;

pub use datakit::mask::Bitmap;
pub use tensor::Mat;
