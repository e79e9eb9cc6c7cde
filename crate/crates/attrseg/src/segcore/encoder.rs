//! Desk-scale patch-transformer image encoder. Patch embedding at stride 8,
//! sinusoidal 2-D positional encoding, one transformer stage per pyramid
//! level with 2x2 average pooling in between. The encoder is frozen under
//! the training policy, so it runs as a plain forward pass.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attn::{apply_ffn, apply_ln, init_attn, init_ffn, init_linear, init_ln, mha};
use super::params::{ParamStore, TapeBinding};
use super::SegError;
use crate::tensor::{Mat, Tape};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    pub patch: usize,
    pub d_vis: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub blocks_per_stage: usize,
    pub levels: usize,
    /// 2-D sinusoidal positional encoding on visual tokens.
    pub pos_enc: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { patch: 8, d_vis: 128, heads: 4, d_ffn: 256, blocks_per_stage: 1, levels: 3, pos_enc: true }
    }
}

impl EncoderConfig {
    /// Input dimensions must be divisible by this.
    pub fn required_divisor(&self) -> usize {
        self.patch << (self.levels - 1)
    }

    pub fn strides(&self) -> Vec<usize> {
        (0..self.levels).map(|l| self.patch << l).collect()
    }
}

/// Image as unit-range RGB planes, row-major `(y, x, channel)`.
#[derive(Clone, Debug)]
pub struct ImageTensor {
    pub h: usize,
    pub w: usize,
    pub rgb: Vec<f64>,
}

impl From<&crate::raster::Image> for ImageTensor {
    fn from(img: &crate::raster::Image) -> Self {
        Self { h: img.h, w: img.w, rgb: img.to_unit_rgb() }
    }
}

#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub stride: usize,
    pub h: usize,
    pub w: usize,
    /// `(h*w) x d_vis` feature map.
    pub feat: Mat,
}

/// Per-scale visual feature maps, shallow to deep, strides strictly
/// increasing, all sharing `d_vis`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<PyramidLevel>,
}

impl FeaturePyramid {
    pub fn deepest(&self) -> &PyramidLevel {
        self.levels.last().expect("pyramid has levels")
    }

    pub fn input_size(&self) -> (usize, usize) {
        let l0 = &self.levels[0];
        (l0.h * l0.stride, l0.w * l0.stride)
    }
}

fn stage_prefix(stage: usize, block: usize) -> String {
    format!("encoder.s{stage}.b{block}")
}

pub fn init_encoder(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &EncoderConfig) {
    let patch_dim = cfg.patch * cfg.patch * 3;
    init_linear(store, rng, "encoder.patch_embed", patch_dim, cfg.d_vis, false);
    for stage in 0..cfg.levels {
        for block in 0..cfg.blocks_per_stage {
            let p = stage_prefix(stage, block);
            init_ln(store, &format!("{p}.ln1"), cfg.d_vis);
            init_attn(store, rng, &format!("{p}.attn"), cfg.d_vis, false);
            init_ln(store, &format!("{p}.ln2"), cfg.d_vis);
            init_ffn(store, rng, &format!("{p}.ffn"), cfg.d_vis, cfg.d_ffn, false);
        }
    }
}

/// Rows are patches in grid row-major order; a row is the patch's pixels in
/// `(dy, dx, channel)` order.
fn patchify(img: &ImageTensor, patch: usize) -> Mat {
    let (gh, gw) = (img.h / patch, img.w / patch);
    Mat::from_fn(gh * gw, patch * patch * 3, |r, c| {
        let (pi, pj) = (r / gw, r % gw);
        let dy = c / (patch * 3);
        let dx = (c / 3) % patch;
        let ch = c % 3;
        let (y, x) = (pi * patch + dy, pj * patch + dx);
        img.rgb[3 * (y * img.w + x) + ch]
    })
}

/// Fixed 2-D sine/cosine positional encoding: first half from x, second
/// half from y.
fn positional_encoding(gh: usize, gw: usize, d: usize) -> Mat {
    let half = d / 2;
    let pairs = half / 2;
    Mat::from_fn(gh * gw, d, |r, c| {
        let (i, j) = (r / gw, r % gw);
        let (pos, local) = if c < half { (j as f64, c) } else { (i as f64, c - half) };
        let pair = (local / 2).min(pairs.saturating_sub(1));
        let freq = 1.0 / 10000f64.powf(2.0 * pair as f64 / half as f64);
        if local % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    })
}

/// Produces the feature pyramid for an image. Deterministic for a fixed
/// parameter store.
pub fn encode_image(
    store: &ParamStore,
    cfg: &EncoderConfig,
    img: &ImageTensor,
) -> Result<FeaturePyramid, SegError> {
    let divisor = cfg.required_divisor();
    if !img.h.is_multiple_of(divisor) || !img.w.is_multiple_of(divisor) {
        return Err(SegError::Shape(format!(
            "image {}x{} not divisible by {divisor} (patch {} with {} levels)",
            img.h, img.w, cfg.patch, cfg.levels
        )));
    }
    if img.rgb.len() != 3 * img.h * img.w {
        return Err(SegError::Shape(format!(
            "rgb buffer holds {} values, expected {}",
            img.rgb.len(),
            3 * img.h * img.w
        )));
    }
    // The encoder is frozen: run on a throwaway tape and keep the values.
    let tape = Tape::new();
    let binding = TapeBinding::new(&tape, store);
    let patches = tape.constant(patchify(img, cfg.patch));
    let mut x = super::attn::apply_linear(&binding, "encoder.patch_embed", patches);
    let (mut gh, mut gw) = (img.h / cfg.patch, img.w / cfg.patch);
    if cfg.pos_enc {
        let pe = tape.constant(positional_encoding(gh, gw, cfg.d_vis));
        x = x.add(pe);
    }
    let mut levels = Vec::with_capacity(cfg.levels);
    for stage in 0..cfg.levels {
        if stage > 0 {
            x = x.avg_pool2(gh, gw);
            gh /= 2;
            gw /= 2;
        }
        for block in 0..cfg.blocks_per_stage {
            let p = stage_prefix(stage, block);
            let normed = apply_ln(&binding, &format!("{p}.ln1"), x);
            x = x.add(mha(&binding, &format!("{p}.attn"), normed, normed, cfg.heads));
            let normed = apply_ln(&binding, &format!("{p}.ln2"), x);
            x = x.add(apply_ffn(&binding, &format!("{p}.ffn"), normed));
        }
        levels.push(PyramidLevel {
            stride: cfg.patch << stage,
            h: gh,
            w: gw,
            feat: x.value(),
        });
    }
    Ok(FeaturePyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy_store(cfg: &EncoderConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_encoder(&mut store, &mut rng, cfg);
        store
    }

    fn gray(h: usize, w: usize, v: f64) -> ImageTensor {
        ImageTensor { h, w, rgb: vec![v; 3 * h * w] }
    }

    #[test]
    fn stride_arithmetic() {
        let cfg = EncoderConfig::default();
        let store = toy_store(&cfg, 1);
        let pyr = encode_image(&store, &cfg, &gray(64, 64, 0.5)).unwrap();
        let shapes: Vec<(usize, usize, usize)> =
            pyr.levels.iter().map(|l| (l.stride, l.h, l.w)).collect();
        assert_eq!(shapes, vec![(8, 8, 8), (16, 4, 4), (32, 2, 2)]);
        for l in &pyr.levels {
            assert_eq!(l.feat.rows(), l.h * l.w);
            assert_eq!(l.feat.cols(), cfg.d_vis);
        }
        assert_eq!(pyr.input_size(), (64, 64));
    }

    #[test]
    fn indivisible_dimensions_rejected() {
        let cfg = EncoderConfig::default();
        let store = toy_store(&cfg, 1);
        assert!(matches!(
            encode_image(&store, &cfg, &gray(60, 64, 0.5)),
            Err(SegError::Shape(_))
        ));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn constant_image_gives_spatially_constant_levels() {
        // Two-block toy encoder, translation-equivariant patching, no
        // positional encoding; all biases are zero-initialized so the
        // encoder is bias-free.
        let cfg = EncoderConfig {
            patch: 8,
            d_vis: 16,
            heads: 2,
            d_ffn: 32,
            blocks_per_stage: 2,
            levels: 3,
            pos_enc: false,
        };
        let store = toy_store(&cfg, 7);
        let pyr = encode_image(&store, &cfg, &gray(64, 64, 0.37)).unwrap();
        for level in &pyr.levels {
            let first = level.feat.row(0).to_vec();
            for r in 1..level.feat.rows() {
                for c in 0..level.feat.cols() {
                    assert!(
                        (level.feat.get(r, c) - first[c]).abs() < 1e-12,
                        "level stride {} not constant at row {r}",
                        level.stride
                    );
                }
            }
        }
    }

    #[test]
    fn pos_enc_breaks_constancy() {
        let cfg = EncoderConfig { d_vis: 16, heads: 2, d_ffn: 32, ..EncoderConfig::default() };
        let store = toy_store(&cfg, 7);
        let pyr = encode_image(&store, &cfg, &gray(64, 64, 0.37)).unwrap();
        let l0 = &pyr.levels[0];
        let mut differs = false;
        for c in 0..l0.feat.cols() {
            if (l0.feat.get(0, c) - l0.feat.get(3, c)).abs() > 1e-9 {
                differs = true;
            }
        }
        assert!(differs, "positional encoding should distinguish positions");
    }

    #[test]
    fn deterministic_across_runs() {
        let cfg = EncoderConfig::default();
        let store = toy_store(&cfg, 42);
        let img = ImageTensor {
            h: 64,
            w: 64,
            rgb: (0..64 * 64 * 3).map(|i| (i % 251) as f64 / 251.0).collect(),
        };
        let a = encode_image(&store, &cfg, &img).unwrap();
        let b = encode_image(&store, &cfg, &img).unwrap();
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            assert_eq!(la.feat, lb.feat);
        }
        // A different seed gives different features.
        let other = toy_store(&cfg, 43);
        let c = encode_image(&other, &cfg, &img).unwrap();
        assert!(a.levels[0].feat.max_abs_diff(&c.levels[0].feat) > 1e-9);
    }
}
