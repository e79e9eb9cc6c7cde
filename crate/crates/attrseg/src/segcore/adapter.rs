//! Language-aware adapter: cross-attention with visual tokens as queries
//! and the projected text embedding as keys/values, a feed-forward layer,
//! and a residual back onto the original features. Both output projections
//! are zero-initialized, so a fresh adapter is exactly the identity.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attn::{apply_ffn, apply_ln, init_attn, init_ffn, init_ln, mha_with_weights};
use super::params::{ParamStore, TapeBinding};
use super::SegError;
use crate::tensor::{Mat, Tape, Var};

/// Which pyramid scales receive language injection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSelect {
    /// Adapters at every pyramid level.
    #[default]
    All,
    /// Single-scale ablation: deepest level only.
    DeepestOnly,
}

pub fn adapter_prefix(stride: usize) -> String {
    format!("adapter.s{stride}")
}

pub fn init_adapter(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    stride: usize,
    d: usize,
    d_ffn: usize,
) {
    let p = adapter_prefix(stride);
    init_ln(store, &format!("{p}.ln1"), d);
    init_attn(store, rng, &format!("{p}.attn"), d, true);
    init_ln(store, &format!("{p}.ln2"), d);
    init_ffn(store, rng, &format!("{p}.ffn"), d, d_ffn, true);
}

/// Fused feature for one scale. Pre-norm residual structure:
/// `x = v + Attn(LN(v), E)` then `f = x + FFN(LN(x))`; with the output
/// projections zero-initialized both branches vanish and `f == v` bit-exactly.
pub fn lam_forward<'t>(
    binding: &TapeBinding<'t, '_>,
    stride: usize,
    v: Var<'t>,
    e: Var<'t>,
    heads: usize,
) -> Result<Var<'t>, SegError> {
    Ok(lam_forward_with_attention(binding, stride, v, e, heads)?.0)
}

pub fn lam_forward_with_attention<'t>(
    binding: &TapeBinding<'t, '_>,
    stride: usize,
    v: Var<'t>,
    e: Var<'t>,
    heads: usize,
) -> Result<(Var<'t>, Vec<Var<'t>>), SegError> {
    if v.cols() != e.cols() {
        return Err(SegError::Shape(format!(
            "visual width {} != prompt width {}",
            v.cols(),
            e.cols()
        )));
    }
    let p = adapter_prefix(stride);
    let normed = apply_ln(binding, &format!("{p}.ln1"), v);
    let (attn_out, weights) =
        mha_with_weights(binding, &format!("{p}.attn"), normed, e, heads);
    let x = v.add(attn_out);
    let normed = apply_ln(binding, &format!("{p}.ln2"), x);
    let fused = x.add(apply_ffn(binding, &format!("{p}.ffn"), normed));
    Ok((fused, weights))
}

/// A pyramid level lifted onto a tape.
#[derive(Clone, Copy)]
pub struct LevelVar<'t> {
    pub stride: usize,
    pub h: usize,
    pub w: usize,
    pub var: Var<'t>,
}

/// Applies the adapter at every selected scale; unselected scales pass
/// through untouched.
pub fn multi_scale_inject<'t>(
    binding: &TapeBinding<'t, '_>,
    levels: &[LevelVar<'t>],
    e: Var<'t>,
    scales: ScaleSelect,
    heads: usize,
) -> Result<Vec<LevelVar<'t>>, SegError> {
    let selected: Vec<usize> = match scales {
        ScaleSelect::All => levels.iter().map(|l| l.stride).collect(),
        ScaleSelect::DeepestOnly => {
            vec![levels.last().ok_or_else(|| SegError::Config("empty pyramid".into()))?.stride]
        }
    };
    for stride in &selected {
        let probe = format!("{}.attn.q.w", adapter_prefix(*stride));
        if !binding.store().contains(&probe) {
            return Err(SegError::Config(format!(
                "no adapter parameters for selected scale (stride {stride})"
            )));
        }
    }
    let mut out = Vec::with_capacity(levels.len());
    for level in levels {
        let var = if selected.contains(&level.stride) {
            lam_forward(binding, level.stride, level.var, e, heads)?
        } else {
            level.var
        };
        out.push(LevelVar { var, ..*level });
    }
    Ok(out)
}

/// Forward-only probe of a fresh forward's attention weights.
pub fn lam_attention_weights(
    store: &ParamStore,
    stride: usize,
    v: &Mat,
    e: &Mat,
    heads: usize,
) -> Result<Vec<Mat>, SegError> {
    let tape = Tape::new();
    let binding = TapeBinding::new(&tape, store);
    let vv = tape.constant(v.clone());
    let ve = tape.constant(e.clone());
    let (_, weights) = lam_forward_with_attention(&binding, stride, vv, ve, heads)?;
    Ok(weights.iter().map(Var::value).collect())
}
