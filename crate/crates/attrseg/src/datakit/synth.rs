//! Synthetic attribute benchmark: colored geometric shapes on textured
//! backgrounds. Every scene contains a target and a distractor; for the
//! referring and reasoning categories both share a shape kind, so the bare
//! target name is ambiguous and only the generated attributes (color,
//! relative position) disambiguate. Semantic scenes use distinct kinds.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Category, MaskRef, SampleRecord};
use super::mask::Bitmap;
use super::rle::encode_mask;
use crate::raster::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }
}

pub const DEFAULT_COLORS: [(&str, [u8; 3]); 6] = [
    ("red", [220, 40, 40]),
    ("green", [40, 180, 60]),
    ("blue", [50, 80, 220]),
    ("yellow", [230, 210, 40]),
    ("magenta", [200, 50, 200]),
    ("cyan", [40, 200, 210]),
];

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    pub colors: Vec<(String, [u8; 3])>,
    pub shapes: Vec<ShapeKind>,
    /// Sample id prefix, also keeps train/eval image files apart.
    pub prefix: String,
    /// When true every sample is a reasoning sample (the evaluation split of
    /// the benchmark); otherwise categories rotate.
    pub reasoning_only: bool,
}

impl SynthConfig {
    pub fn new(count: usize, seed: u64, prefix: &str) -> Self {
        Self {
            count,
            image_size: 64,
            seed,
            colors: DEFAULT_COLORS.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
            shapes: vec![ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle],
            prefix: prefix.to_string(),
            reasoning_only: false,
        }
    }
}

/// Placed shape with everything the scripted chain texts need.
#[derive(Clone, Debug)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub color_name: String,
    pub rgb: [u8; 3],
    pub pos_name: String,
    pub center: (f64, f64),
    pub radius: f64,
}

/// A generated scene: the record plus the canned conversation texts the
/// scripted backend will answer with.
#[derive(Clone, Debug)]
pub struct Scene {
    pub record: SampleRecord,
    pub image: Image,
    pub mask: Bitmap,
    pub target: ShapeSpec,
    pub distractor: ShapeSpec,
    pub step1_answer: String,
    pub step2_response: String,
    pub step3_response: String,
    pub merged_response: String,
}

fn cell_name(row: usize, col: usize) -> String {
    if (row, col) == (1, 1) {
        return "center".to_string();
    }
    let r = ["upper", "middle", "lower"][row];
    let c = ["left", "center", "right"][col];
    format!("{r} {c}")
}

fn place_shape(
    rng: &mut ChaCha8Rng,
    kind: ShapeKind,
    color: &(String, [u8; 3]),
    cell: usize,
    size: usize,
) -> ShapeSpec {
    let (row, col) = (cell / 3, cell % 3);
    let pitch = size as f64 / 3.0;
    let jitter = size as f64 / 64.0;
    let cy = pitch * (row as f64 + 0.5) + rng.random_range(-jitter..=jitter);
    let cx = pitch * (col as f64 + 0.5) + rng.random_range(-jitter..=jitter);
    // Small shapes keep localization fine-grained relative to the pyramid.
    let scale = size as f64 / 64.0;
    let radius = rng.random_range(4.0 * scale..=7.0 * scale);
    ShapeSpec {
        kind,
        color_name: color.0.clone(),
        rgb: color.1,
        pos_name: cell_name(row, col),
        center: (cy, cx),
        radius,
    }
}

fn inside(shape: &ShapeSpec, y: f64, x: f64) -> bool {
    let (cy, cx) = shape.center;
    let (dy, dx) = (y - cy, x - cx);
    let r = shape.radius;
    match shape.kind {
        ShapeKind::Circle => dy * dy + dx * dx <= r * r,
        ShapeKind::Square => dy.abs() <= r && dx.abs() <= r,
        ShapeKind::Triangle => {
            let from_apex = y - (cy - r);
            (0.0..=2.0 * r).contains(&from_apex) && dx.abs() <= from_apex / 2.0
        }
    }
}

pub fn generate_scene(cfg: &SynthConfig, index: usize) -> Scene {
    let mut rng = crate::rng::derive_rng_indexed(cfg.seed, "synth-scene", index as u64);
    let size = cfg.image_size;

    let category = if cfg.reasoning_only {
        Category::Reasoning
    } else {
        match index % 3 {
            0 => Category::Reasoning,
            1 => Category::Referring,
            _ => Category::Semantic,
        }
    };

    let target_kind = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
    let distractor_kind = if category == Category::Semantic {
        // Distinct kind keeps the bare category name unambiguous.
        let others: Vec<ShapeKind> =
            cfg.shapes.iter().copied().filter(|k| *k != target_kind).collect();
        if others.is_empty() { target_kind } else { others[rng.random_range(0..others.len())] }
    } else {
        target_kind
    };

    let ci = rng.random_range(0..cfg.colors.len());
    let mut cj = rng.random_range(0..cfg.colors.len() - 1);
    if cj >= ci {
        cj += 1;
    }
    let target_color = cfg.colors[ci].clone();
    // In half of the name-ambiguous scenes the distractor also shares the
    // color, so only the relative-position attribute discriminates.
    let same_color = category != Category::Semantic && rng.random::<f64>() < 0.5;
    let distractor_color =
        if same_color { target_color.clone() } else { cfg.colors[cj].clone() };

    let cell_a = rng.random_range(0..9);
    let mut cell_b = rng.random_range(0..8);
    if cell_b >= cell_a {
        cell_b += 1;
    }

    let target = place_shape(&mut rng, target_kind, &target_color, cell_a, size);
    let distractor = place_shape(&mut rng, distractor_kind, &distractor_color, cell_b, size);

    // Textured background: gentle gradient plus per-pixel speckle.
    let base = rng.random_range(0.15..0.35);
    let gx = rng.random_range(-0.10..0.10);
    let gy = rng.random_range(-0.10..0.10);
    let mut image = Image::new(size, size);
    let mut mask = Bitmap::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            let speckle = rng.random_range(-0.04..0.04);
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let rgb = if inside(&target, fy, fx) {
                mask.set(y, x, true);
                target.rgb
            } else if inside(&distractor, fy, fx) {
                distractor.rgb
            } else {
                let v = (base + gx * fx / size as f64 + gy * fy / size as f64).clamp(0.0, 1.0);
                [(v * 255.0) as u8; 3]
            };
            let perturb = |c: u8| ((c as f64 / 255.0 + speckle).clamp(0.0, 1.0) * 255.0) as u8;
            image.put(y, x, [perturb(rgb[0]), perturb(rgb[1]), perturb(rgb[2])]);
        }
    }

    let kind = target.kind.name();
    let (color, pos) = (&target.color_name, &target.pos_name);
    let (kind2, color2, pos2) =
        (distractor.kind.name(), &distractor.color_name, &distractor.pos_name);

    let step1_answer = format!(
        "It is the {color} {kind} in the {pos} of the image. There is also a {color2} {kind2} \
         in the {pos2}, but the {pos} area holds the {color} one."
    );
    let step2_response = format!("The user wants the {kind} from the image.");
    let step3_response = format!(
        "The {kind} can be discriminated by its {color} color. It is located in the {pos} of the image."
    );
    let merged_response = format!("{step2_response} {step3_response}");

    let sample_id = format!("{}-{index:05}", cfg.prefix);
    let (phrase, query, description) = match category {
        Category::Referring => (Some(format!("the {color} {kind}")), None, None),
        Category::Semantic => (Some(format!("the {kind}")), None, None),
        Category::Reasoning => {
            let query = if index.is_multiple_of(2) {
                format!("sitting in the {pos} area")
            } else {
                format!("Which object fills the {pos} area of this image?")
            };
            let description =
                format!("The {color} {kind} occupies the {pos} region of the image.");
            (None, Some(query), Some(description))
        }
    };

    let record = SampleRecord {
        sample_id: sample_id.clone(),
        image: PathBuf::from(format!("images/{sample_id}.ppm")),
        mask: MaskRef::Rle(encode_mask(&mask)),
        category,
        phrase,
        query,
        description,
    };

    Scene {
        record,
        image,
        mask,
        target,
        distractor,
        step1_answer,
        step2_response,
        step3_response,
        merged_response,
    }
}

/// Generates all scenes and writes images + manifest under `dir`. Returns
/// the scenes so callers can script the chains.
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> std::io::Result<Vec<Scene>> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut scenes = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let scene = generate_scene(cfg, i);
        crate::raster::write_ppm(&dir.join(&scene.record.image), &scene.image)?;
        scenes.push(scene);
    }
    let records: Vec<SampleRecord> = scenes.iter().map(|s| s.record.clone()).collect();
    super::manifest::Manifest::save(&dir.join(format!("manifest_{}.jsonl", cfg.prefix)), &records)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SynthConfig::new(3, 5, "t");
        let a = generate_scene(&cfg, 1);
        let b = generate_scene(&cfg, 1);
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.step1_answer, b.step1_answer);
    }

    #[test]
    fn ambiguous_name_for_reasoning_scenes() {
        let cfg = SynthConfig { reasoning_only: true, ..SynthConfig::new(40, 3, "t") };
        let mut same_color = 0usize;
        for i in 0..40 {
            let s = generate_scene(&cfg, i);
            assert_eq!(s.target.kind, s.distractor.kind, "scene {i} should be name-ambiguous");
            // Position always discriminates; color only sometimes.
            assert_ne!(s.target.pos_name, s.distractor.pos_name);
            if s.target.color_name == s.distractor.color_name {
                same_color += 1;
            }
            assert!(s.mask.count_ones() > 0);
        }
        assert!(same_color > 5, "some scenes should be color-ambiguous too ({same_color})");
        assert!(same_color < 35, "color should still discriminate sometimes ({same_color})");
    }

    #[test]
    fn semantic_scenes_use_distinct_kinds() {
        let cfg = SynthConfig::new(9, 4, "t");
        for i in 0..9 {
            let s = generate_scene(&cfg, i);
            if s.record.category == Category::Semantic {
                assert_ne!(s.target.kind, s.distractor.kind);
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn mask_matches_target_color_pixels() {
        let cfg = SynthConfig::new(1, 11, "t");
        let s = generate_scene(&cfg, 0);
        // Masked pixels should be close to the target color despite speckle.
        let mut checked = 0;
        for y in 0..64 {
            for x in 0..64 {
                if s.mask.get(y, x) == 1 {
                    let px = s.image.at(y, x);
                    for c in 0..3 {
                        assert!((px[c] as i32 - s.target.rgb[c] as i32).abs() <= 12);
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 20);
    }
}
