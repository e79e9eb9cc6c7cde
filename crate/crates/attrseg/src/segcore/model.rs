//! The promptable segmentation model: frozen patch-transformer encoder,
//! projection MLP from backend embedding space into visual feature space,
//! language-aware adapters at selected scales, and the two-way-attention
//! mask decoder.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::adapter::{self, LevelVar, ScaleSelect};
use super::decoder::{self, DecoderConfig};
use super::encoder::{self, EncoderConfig, FeaturePyramid, ImageTensor};
use super::params::{CheckpointError, ParamStore, TapeBinding};
use super::SegError;
use crate::datakit::mask::Bitmap;
use crate::tensor::{sigmoid_scalar, Mat, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionActivation {
    #[default]
    Silu,
    /// Linear path, used by identity-configuration checks.
    Identity,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Backend embedding width the projection expects.
    pub d_llm: usize,
    pub d_vis: usize,
    /// Projection MLP hidden width.
    pub d_hidden: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub patch: usize,
    pub blocks_per_stage: usize,
    pub levels: usize,
    pub decoder_blocks: usize,
    pub scales: ScaleSelect,
    pub pos_enc: bool,
    pub projection_activation: ProjectionActivation,
    /// The freeze policy treats the projection MLP as trainable; flip to
    /// freeze it alongside the encoder.
    pub train_projection: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_llm: 64,
            d_vis: 128,
            d_hidden: 256,
            heads: 4,
            d_ffn: 256,
            patch: 8,
            blocks_per_stage: 1,
            levels: 3,
            decoder_blocks: 2,
            scales: ScaleSelect::All,
            pos_enc: true,
            projection_activation: ProjectionActivation::Silu,
            train_projection: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            patch: self.patch,
            d_vis: self.d_vis,
            heads: self.heads,
            d_ffn: self.d_ffn,
            blocks_per_stage: self.blocks_per_stage,
            levels: self.levels,
            pos_enc: self.pos_enc,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            d_vis: self.d_vis,
            heads: self.heads,
            d_ffn: self.d_ffn,
            blocks: self.decoder_blocks,
        }
    }
}

/// Projected token embeddings in visual feature space, `k x d_vis`.
#[derive(Clone, Debug)]
pub struct TextEmbedding(pub Mat);

impl TextEmbedding {
    pub fn rows(&self) -> usize {
        self.0.rows()
    }
}

pub struct SegModel {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl SegModel {
    pub fn new(config: ModelConfig) -> Self {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::derive_rng(config.seed, "segmodel-init");
        encoder::init_encoder(&mut store, &mut rng, &config.encoder());
        super::attn::init_linear(&mut store, &mut rng, "project.l1", config.d_llm, config.d_hidden, false);
        super::attn::init_linear(&mut store, &mut rng, "project.l2", config.d_hidden, config.d_vis, false);
        for stride in config.encoder().strides() {
            adapter::init_adapter(&mut store, &mut rng, stride, config.d_vis, config.d_ffn);
        }
        decoder::init_decoder(&mut store, &mut rng, &config.decoder());
        let mut model = Self { config, store };
        model.freeze_policy();
        model
    }

    /// Marks the encoder frozen and everything else trainable (adapters,
    /// decoder, projection MLP unless configured otherwise). Returns the
    /// trainable set.
    pub fn freeze_policy(&mut self) -> BTreeSet<String> {
        let names: Vec<String> = self.store.names().map(str::to_string).collect();
        let mut trainable = BTreeSet::new();
        for name in names {
            let is_encoder = name.starts_with("encoder.");
            let is_projection = name.starts_with("project.");
            let train = if is_encoder {
                false
            } else if is_projection {
                self.config.train_projection
            } else {
                true
            };
            self.store.set_trainable(&name, train);
            if train {
                trainable.insert(name);
            }
        }
        trainable
    }

    /// Feature pyramid for an image; the encoder is frozen so this is a
    /// plain forward pass, cacheable per image.
    pub fn encode_image(&self, img: &ImageTensor) -> Result<FeaturePyramid, SegError> {
        encoder::encode_image(&self.store, &self.config.encoder(), img)
    }

    /// Projects raw backend embeddings (`k x d_llm`) into visual feature
    /// space on the given tape.
    pub fn project_embeddings_on<'t>(
        &self,
        binding: &TapeBinding<'t, '_>,
        raw: Var<'t>,
    ) -> Result<Var<'t>, SegError> {
        if raw.cols() != self.config.d_llm {
            return Err(SegError::WidthMismatch {
                got: raw.cols(),
                expected: self.config.d_llm,
            });
        }
        if raw.rows() == 0 {
            return Ok(binding.tape().constant(Mat::zeros(0, self.config.d_vis)));
        }
        let hidden = super::attn::apply_linear(binding, "project.l1", raw);
        let hidden = match self.config.projection_activation {
            ProjectionActivation::Silu => hidden.silu(),
            ProjectionActivation::Identity => hidden,
        };
        Ok(super::attn::apply_linear(binding, "project.l2", hidden))
    }

    /// Plain (no-gradient) projection returning the TextEmbedding.
    pub fn project_embeddings(&self, raw: &Mat) -> Result<TextEmbedding, SegError> {
        if !raw.all_finite() {
            return Err(SegError::NonFinite("raw embeddings"));
        }
        let tape = Tape::new();
        let binding = TapeBinding::new(&tape, &self.store);
        let out = self.project_embeddings_on(&binding, tape.constant(raw.clone()))?;
        Ok(TextEmbedding(out.value()))
    }

    /// Lifts a precomputed pyramid onto a tape as constants.
    pub fn pyramid_on<'t>(&self, tape: &'t Tape, pyramid: &FeaturePyramid) -> Vec<LevelVar<'t>> {
        pyramid
            .levels
            .iter()
            .map(|l| LevelVar { stride: l.stride, h: l.h, w: l.w, var: tape.constant(l.feat.clone()) })
            .collect()
    }

    /// Full differentiable path from raw embeddings to mask logits, given a
    /// precomputed (frozen) pyramid.
    pub fn logits_on<'t>(
        &self,
        binding: &TapeBinding<'t, '_>,
        pyramid: &[LevelVar<'t>],
        raw: Var<'t>,
    ) -> Result<decoder::MaskLogits<'t>, SegError> {
        if raw.rows() == 0 {
            return Err(SegError::EmptyPrompt);
        }
        let e = self.project_embeddings_on(binding, raw)?;
        let fused = adapter::multi_scale_inject(
            binding,
            pyramid,
            e,
            self.config.scales,
            self.config.heads,
        )?;
        decoder::decode_mask(binding, &self.config.decoder(), &fused, e)
    }

    /// Inference forward pass: image + raw embeddings -> logits map.
    pub fn forward(&self, img: &ImageTensor, raw: &Mat) -> Result<(Mat, usize, usize), SegError> {
        let pyramid = self.encode_image(img)?;
        let tape = Tape::new();
        let binding = TapeBinding::new(&tape, &self.store);
        let levels = self.pyramid_on(&tape, &pyramid);
        let logits = self.logits_on(&binding, &levels, tape.constant(raw.clone()))?;
        Ok((logits.to_mat(), logits.h, logits.w))
    }

    /// Thresholds sigmoid(logits) at 0.5 for reporting.
    pub fn logits_to_mask(flat: &Mat, h: usize, w: usize) -> Bitmap {
        Bitmap::from_fn(h, w, |y, x| sigmoid_scalar(flat.get(y * w + x, 0)) > 0.5)
    }

    pub fn save(&self, path: &std::path::Path, extra_meta: &BTreeMap<String, String>) -> Result<(), CheckpointError> {
        let mut meta = extra_meta.clone();
        meta.insert(
            "model_config".to_string(),
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        self.store.save(path, &meta)
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, BTreeMap<String, String>), CheckpointError> {
        let (raw, meta) = ParamStore::load(path)?;
        let config: ModelConfig = meta
            .get("model_config")
            .ok_or_else(|| CheckpointError::Corrupt("missing model_config meta".into()))
            .and_then(|s| {
                serde_json::from_str(s).map_err(|e| CheckpointError::Corrupt(e.to_string()))
            })?;
        // Keep exactly the parameters the config implies, in canonical
        // order; checkpoints may carry extra arrays (optimizer state).
        let reference = SegModel::new(config.clone());
        let mut store = ParamStore::new();
        for name in reference.store.names() {
            match raw.iter().find(|(n, _)| *n == name) {
                Some((_, param)) => store.insert(name, param.value.clone(), param.trainable),
                None => return Err(CheckpointError::UnknownParam(name.to_string())),
            }
        }
        Ok((Self { config, store }, meta))
    }
}
