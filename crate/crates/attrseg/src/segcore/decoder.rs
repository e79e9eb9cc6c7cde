//! Prompt-based mask decoder: two-way attention blocks (prompt-to-vision
//! and vision-to-prompt) over the deepest fused level, lateral fusion while
//! upsampling through the pyramid, then learned 2x2 upsampling stages down
//! to per-pixel features. The mask logit at a pixel is the dot product of
//! its feature with a vector predicted from the prompt tokens.

use rand_chacha::ChaCha8Rng;

use super::attn::{apply_ffn, apply_linear, apply_ln, init_attn, init_ffn, init_linear, init_ln, mha};
use super::adapter::LevelVar;
use super::params::{ParamStore, TapeBinding};
use super::SegError;
use crate::tensor::{Mat, Var};

#[derive(Clone, Debug)]
pub struct DecoderConfig {
    pub d_vis: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub blocks: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { d_vis: 128, heads: 4, d_ffn: 256, blocks: 2 }
    }
}

impl DecoderConfig {
    /// Feature widths on the way from stride 8 down to stride 1: halved per
    /// stage with a floor of 4 so toy widths stay legal.
    fn up_widths(&self) -> [usize; 4] {
        let mut widths = [self.d_vis; 4];
        for i in 1..4 {
            widths[i] = (widths[i - 1] / 2).max(4);
        }
        widths
    }
}

pub fn init_decoder(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &DecoderConfig) {
    let d = cfg.d_vis;
    for b in 0..cfg.blocks {
        let p = format!("decoder.b{b}");
        init_ln(store, &format!("{p}.ln1"), d);
        init_attn(store, rng, &format!("{p}.self"), d, false);
        init_ln(store, &format!("{p}.ln2"), d);
        init_attn(store, rng, &format!("{p}.t2v"), d, false);
        init_ln(store, &format!("{p}.ln3"), d);
        init_ffn(store, rng, &format!("{p}.ffn"), d, cfg.d_ffn, false);
        init_ln(store, &format!("{p}.ln4"), d);
        init_attn(store, rng, &format!("{p}.v2t"), d, false);
    }
    // Lateral projections and post-fusion mixes for strides 16 and 8.
    for stride in [16, 8] {
        init_linear(store, rng, &format!("decoder.lat.s{stride}"), d, d, false);
        init_linear(store, rng, &format!("decoder.mix.s{stride}"), d, d, false);
    }
    // Learned 2x2 upsampling: four position-specific linear maps per stage.
    let widths = cfg.up_widths();
    for (stage, pair) in widths.windows(2).enumerate() {
        for quad in 0..4 {
            init_linear(store, rng, &format!("decoder.up{stage}.q{quad}"), pair[0], pair[1], false);
        }
    }
    // Prompt-summary MLP predicting the per-pixel classifier.
    init_linear(store, rng, "decoder.head.mlp1", d, d, false);
    init_linear(store, rng, "decoder.head.mlp2", d, widths[3], false);
    store.insert("decoder.head.bias", Mat::zeros(1, 1), true);
}

/// Mask logits at input resolution as a `(h0*w0) x 1` column.
pub struct MaskLogits<'t> {
    pub h: usize,
    pub w: usize,
    pub flat: Var<'t>,
}

impl MaskLogits<'_> {
    pub fn to_mat(&self) -> Mat {
        self.flat.value()
    }
}

/// One learned 2x2 upsampling stage: each output position in a 2x2 block
/// gets its own linear map of the coarse feature.
fn up_stage<'t>(
    binding: &TapeBinding<'t, '_>,
    stage: usize,
    x: Var<'t>,
    h: usize,
    w: usize,
) -> Var<'t> {
    let quads: Vec<Var<'t>> = (0..4)
        .map(|quad| apply_linear(binding, &format!("decoder.up{stage}.q{quad}"), x))
        .collect();
    Var::interleave2x2([quads[0], quads[1], quads[2], quads[3]], h, w).silu()
}

/// Decodes a mask from the fused pyramid and the projected prompt tokens.
/// The pyramid must be ordered shallow (stride 8) to deep (stride 32).
pub fn decode_mask<'t>(
    binding: &TapeBinding<'t, '_>,
    cfg: &DecoderConfig,
    fused: &[LevelVar<'t>],
    e: Var<'t>,
) -> Result<MaskLogits<'t>, SegError> {
    if e.rows() == 0 {
        return Err(SegError::EmptyPrompt);
    }
    if fused.len() != 3 {
        return Err(SegError::Config(format!(
            "decoder expects a 3-level pyramid, got {}",
            fused.len()
        )));
    }
    let (l8, l16, l32) = (&fused[0], &fused[1], &fused[2]);

    // Two-way attention over the deepest level.
    let mut tokens = e;
    let mut vis = l32.var;
    for b in 0..cfg.blocks {
        let p = format!("decoder.b{b}");
        let normed = apply_ln(binding, &format!("{p}.ln1"), tokens);
        tokens = tokens.add(mha(binding, &format!("{p}.self"), normed, normed, cfg.heads));
        let normed = apply_ln(binding, &format!("{p}.ln2"), tokens);
        tokens = tokens.add(mha(binding, &format!("{p}.t2v"), normed, vis, cfg.heads));
        let normed = apply_ln(binding, &format!("{p}.ln3"), tokens);
        tokens = tokens.add(apply_ffn(binding, &format!("{p}.ffn"), normed));
        let normed = apply_ln(binding, &format!("{p}.ln4"), vis);
        vis = vis.add(mha(binding, &format!("{p}.v2t"), normed, tokens, cfg.heads));
    }

    // Upsample with lateral fusion: 32 -> 16 -> 8.
    let x16 = vis.upsample2_nearest(l32.h, l32.w);
    let lat16 = apply_linear(binding, "decoder.lat.s16", l16.var);
    let x16 = apply_linear(binding, "decoder.mix.s16", x16.add(lat16)).silu();
    let x8 = x16.upsample2_nearest(l16.h, l16.w);
    let lat8 = apply_linear(binding, "decoder.lat.s8", l8.var);
    let x8 = apply_linear(binding, "decoder.mix.s8", x8.add(lat8)).silu();

    // Learned upsampling 8 -> 4 -> 2 -> 1.
    let x4 = up_stage(binding, 0, x8, l8.h, l8.w);
    let x2 = up_stage(binding, 1, x4, l8.h * 2, l8.w * 2);
    let x1 = up_stage(binding, 2, x2, l8.h * 4, l8.w * 4);

    // Prompt summary -> per-pixel classifier.
    let summary = tokens.rows_mean();
    let hidden = apply_linear(binding, "decoder.head.mlp1", summary).silu();
    let classifier = apply_linear(binding, "decoder.head.mlp2", hidden);
    let logits = x1.matmul_nt(classifier).add_row_broadcast(binding.var("decoder.head.bias"));

    Ok(MaskLogits { h: l8.h * 8, w: l8.w * 8, flat: logits })
}
