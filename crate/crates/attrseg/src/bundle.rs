//! Runnable data bundles: the synthetic benchmark (images, manifests,
//! backend script, templates, descriptor) and a small scripted demo scene.
//! Scripts are produced by replaying the real chain against an oracle that
//! answers from each scene's canned texts, through the recording wrapper —
//! so scripted histories always match what the chain will render.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::scripted::{mock_generation, Recorder, Script, MOCK_EMBED_SEED};
use crate::backend::{BackendDescriptor, BackendError, BackendKind, GenerationResult, MllmBackend};
use crate::datakit::manifest::{Category, Manifest, MaskRef, SampleRecord};
use crate::datakit::qa;
use crate::datakit::rle::encode_mask;
use crate::datakit::synth::{self, Scene, SynthConfig};
use crate::orchestrator::{run_chain, ChainMode, ChainOptions, Step1Source, TemplateSet};
use crate::raster::Image;

/// Answers chain prompts for one scene from its canned texts. The step is
/// recognized from the rendered history's markers.
struct SceneOracle<'a> {
    step1_answer: &'a str,
    step2_response: &'a str,
    step3_response: &'a str,
    merged_response: &'a str,
    descriptor: BackendDescriptor,
}

impl<'a> SceneOracle<'a> {
    fn for_scene(scene: &'a Scene, width: usize) -> Self {
        Self {
            step1_answer: &scene.step1_answer,
            step2_response: &scene.step2_response,
            step3_response: &scene.step3_response,
            merged_response: &scene.merged_response,
            descriptor: oracle_descriptor(width),
        }
    }
}

fn oracle_descriptor(width: usize) -> BackendDescriptor {
    BackendDescriptor {
        kind: BackendKind::Scripted,
        endpoint: None,
        script: None,
        embedding_width: width,
        model: "scripted-mock".to_string(),
        layer: "final".to_string(),
    }
}

impl MllmBackend for SceneOracle<'_> {
    fn generate(&self, _image: &[u8], history: &str) -> Result<GenerationResult, BackendError> {
        let text = if history.contains("Here is the target:") {
            self.step3_response
        } else if history.contains("Follow these guidelines strictly:") {
            self.merged_response
        } else if history.contains("Please analyze the conversation") {
            self.step2_response
        } else {
            self.step1_answer
        };
        mock_generation(text, self.descriptor.embedding_width, MOCK_EMBED_SEED, 0.0)
    }

    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }
}

/// Step-1 source for a record: live query for reasoning samples, seeded
/// Q-A simulation otherwise. The same derivation runs at script-build time
/// and at cache time, so the rendered histories agree.
pub fn step1_source_for(record: &SampleRecord, seed: u64) -> Result<Step1Source, qa::QaError> {
    match record.category {
        Category::Reasoning => Ok(Step1Source::Live {
            query: record.query.clone().unwrap_or_default(),
        }),
        _ => {
            let registry = qa::default_registry();
            let mut rng = qa::qa_rng(seed, &record.sample_id);
            let (question, answer) = qa::simulate_step1(record, &registry, &mut rng)?;
            Ok(Step1Source::Preset { question, answer })
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundlePaths {
    pub dir: PathBuf,
    pub train_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    pub script: PathBuf,
    pub backend_descriptor: PathBuf,
    pub templates: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Chain(#[from] crate::orchestrator::ChainError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Qa(#[from] qa::QaError),
    #[error("train/eval image overlap: {0:?}")]
    SplitLeak(Vec<String>),
}

/// Records both chain modes for a scene into the recorder-wrapped oracle.
fn record_scene(
    dir: &Path,
    scene: &Scene,
    templates: &TemplateSet,
    recorder: &Recorder<SceneOracle<'_>>,
    seed: u64,
) -> Result<(), BundleError> {
    let image_bytes = std::fs::read(dir.join(&scene.record.image))?;
    let step1 = step1_source_for(&scene.record, seed)?;
    for mode in [ChainMode::Merged, ChainMode::Separate] {
        let opts = ChainOptions { templates: templates.clone(), mode, ..ChainOptions::default() };
        run_chain(&image_bytes, step1.clone(), recorder, &opts)?;
    }
    Ok(())
}

/// Generates the synthetic benchmark bundle: train split with rotating
/// categories, reasoning-only eval split, scripted backend covering every
/// chain, and the template file.
pub fn build_benchmark(
    dir: &Path,
    train_count: usize,
    eval_count: usize,
    image_size: usize,
    seed: u64,
) -> Result<BundlePaths, BundleError> {
    let colors = synth::DEFAULT_COLORS.iter().map(|(n, c)| (n.to_string(), *c)).collect();
    build_benchmark_with_colors(dir, train_count, eval_count, image_size, seed, colors)
}

/// [`build_benchmark`] with a custom attribute color vocabulary.
pub fn build_benchmark_with_colors(
    dir: &Path,
    train_count: usize,
    eval_count: usize,
    image_size: usize,
    seed: u64,
    colors: Vec<(String, [u8; 3])>,
) -> Result<BundlePaths, BundleError> {
    std::fs::create_dir_all(dir)?;
    let train_cfg = SynthConfig {
        image_size,
        colors: colors.clone(),
        ..SynthConfig::new(train_count, seed, "train")
    };
    // The eval split draws from a different scene stream and is all
    // reasoning samples.
    let eval_cfg = SynthConfig {
        image_size,
        colors,
        reasoning_only: true,
        ..SynthConfig::new(eval_count, seed.wrapping_add(0x5EED_0001), "eval")
    };
    let train_scenes = synth::write_dataset(&train_cfg, dir)?;
    let eval_scenes = synth::write_dataset(&eval_cfg, dir)?;

    let train_records: Vec<SampleRecord> = train_scenes.iter().map(|s| s.record.clone()).collect();
    let eval_records: Vec<SampleRecord> = eval_scenes.iter().map(|s| s.record.clone()).collect();
    let split = crate::datakit::validate_split(&train_records, &eval_records);
    if !split.is_clean() {
        return Err(BundleError::SplitLeak(split.overlap));
    }

    let templates = TemplateSet::builtin();
    let mut entries = Vec::new();
    for scene in train_scenes.iter().chain(&eval_scenes) {
        let recorder = Recorder::new(SceneOracle::for_scene(scene, 64));
        record_scene(dir, scene, &templates, &recorder, seed)?;
        entries.extend(recorder.into_script().entries);
    }
    let mut script = Script::new("scripted-mock", 64);
    script.entries = entries;

    let paths = write_bundle_files(dir, script, "manifest_train.jsonl", "manifest_eval.jsonl")?;
    Ok(paths)
}

fn write_bundle_files(
    dir: &Path,
    script: Script,
    train_name: &str,
    eval_name: &str,
) -> Result<BundlePaths, BundleError> {
    let script_path = dir.join("script.json");
    script.save(&script_path)?;
    let descriptor = BackendDescriptor {
        kind: BackendKind::Scripted,
        endpoint: None,
        script: Some(PathBuf::from("script.json")),
        embedding_width: 64,
        model: "scripted-mock".to_string(),
        layer: "final".to_string(),
    };
    let descriptor_path = dir.join("backend.json");
    std::fs::write(&descriptor_path, serde_json::to_string_pretty(&descriptor).expect("serializes"))?;
    let templates_path = dir.join("templates.txt");
    std::fs::write(&templates_path, crate::orchestrator::templates::DEFAULT_TEMPLATES)?;
    Ok(BundlePaths {
        dir: dir.to_path_buf(),
        train_manifest: dir.join(train_name),
        eval_manifest: dir.join(eval_name),
        script: script_path,
        backend_descriptor: descriptor_path,
        templates: templates_path,
    })
}

/// The demo scene: a fire-pit image whose scripted chain reproduces the
/// canonical three-step conversation.
pub fn write_demo_bundle(dir: &Path) -> Result<BundlePaths, BundleError> {
    std::fs::create_dir_all(dir.join("images"))?;
    let (image, mask) = fire_pit_image();
    let image_rel = PathBuf::from("images/demo-firepit.ppm");
    crate::raster::write_ppm(&dir.join(&image_rel), &image)?;

    let record = SampleRecord {
        sample_id: "demo-firepit".to_string(),
        image: image_rel,
        mask: MaskRef::Rle(encode_mask(&mask)),
        category: Category::Reasoning,
        phrase: None,
        query: Some("What is the object or part that is hot in this image?".to_string()),
        description: Some("The fire burns bright orange inside the stone fire pit.".to_string()),
    };
    Manifest::save(&dir.join("manifest_demo.jsonl"), std::slice::from_ref(&record))
        .map_err(|e| std::io::Error::other(e.to_string()))?;

    let scene = Scene {
        record,
        image,
        mask,
        target: demo_shape(),
        distractor: demo_shape(),
        step1_answer: "It is fire in the fire pit. The fire is hot and bright, and it keeps the \
                       campers warm."
            .to_string(),
        step2_response: "The user wants the fire from the image.".to_string(),
        step3_response: "The fire can be discriminated from the image by its bright orange color \
                         and the fact that it is emitting heat and light. The fire is surrounded \
                         by stones."
            .to_string(),
        merged_response: "The user wants the fire from the image. The fire can be discriminated \
                          from the image by its bright orange color and the fact that it is \
                          emitting heat and light. The fire is surrounded by stones."
            .to_string(),
    };
    let templates = TemplateSet::builtin();
    let recorder = Recorder::new(SceneOracle::for_scene(&scene, 64));
    record_scene(dir, &scene, &templates, &recorder, 0)?;
    let script = recorder.into_script();
    write_bundle_files(dir, script, "manifest_demo.jsonl", "manifest_demo.jsonl")
}

fn demo_shape() -> synth::ShapeSpec {
    synth::ShapeSpec {
        kind: synth::ShapeKind::Circle,
        color_name: "orange".to_string(),
        rgb: [230, 120, 30],
        pos_name: "center".to_string(),
        center: (40.0, 32.0),
        radius: 9.0,
    }
}

/// Hand-drawn fire-pit scene: dark ground, a ring of gray stones, and the
/// orange fire blob in the middle. The mask covers the fire.
fn fire_pit_image() -> (Image, crate::datakit::mask::Bitmap) {
    let size = 64usize;
    let mut img = Image::new(size, size);
    let mut mask = crate::datakit::mask::Bitmap::zeros(size, size);
    let (cy, cx, fire_r, ring_r) = (40.0f64, 32.0f64, 9.0f64, 15.0f64);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let d = ((fy - cy).powi(2) + (fx - cx).powi(2)).sqrt();
            // Deterministic speckle from pixel coordinates.
            let n = ((x * 31 + y * 17) % 13) as f64 / 13.0;
            let px = if d <= fire_r {
                mask.set(y, x, true);
                let heat = 1.0 - d / fire_r * 0.4;
                [(230.0 * heat) as u8, (120.0 * heat) as u8, 30]
            } else if d <= ring_r && d >= ring_r - 3.0 {
                let g = 120 + (n * 40.0) as u8;
                [g, g, g]
            } else {
                let sky = y < 24;
                if sky {
                    [20 + (n * 10.0) as u8, 24 + (n * 10.0) as u8, 46]
                } else {
                    [44 + (n * 14.0) as u8, 36 + (n * 10.0) as u8, 28]
                }
            };
            img.put(y, x, px);
        }
    }
    (img, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::ScriptedBackend;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("attrseg-bundle-{}-{name}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        dir
    }

    #[test]
    fn demo_bundle_replays_the_fire_chain() {
        let dir = tmp("demo");
        let paths = write_demo_bundle(&dir).unwrap();
        let backend = ScriptedBackend::load(&paths.script).unwrap();
        let image_bytes = std::fs::read(dir.join("images/demo-firepit.ppm")).unwrap();
        let run = run_chain(
            &image_bytes,
            Step1Source::Live {
                query: "What is the object or part that is hot in this image?".into(),
            },
            &backend,
            &ChainOptions::default(),
        )
        .unwrap();
        assert_eq!(run.trace.target, "the fire");
        assert!(run.trace.attributes.contains("bright orange color"));
        // Separate mode is scripted too.
        let opts = ChainOptions { mode: ChainMode::Separate, ..ChainOptions::default() };
        let run2 = run_chain(
            &image_bytes,
            Step1Source::Live {
                query: "What is the object or part that is hot in this image?".into(),
            },
            &backend,
            &opts,
        )
        .unwrap();
        assert_eq!(run2.trace.target, "the fire");
        assert!(!run2.trace.merged_steps_2_3);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn benchmark_bundle_covers_all_chains() {
        let dir = tmp("bench");
        let paths = build_benchmark(&dir, 6, 3, 64, 11).unwrap();
        let backend = ScriptedBackend::load(&paths.script).unwrap();
        let train = Manifest::load(&paths.train_manifest).unwrap();
        let eval = Manifest::load(&paths.eval_manifest).unwrap();
        assert_eq!(train.len(), 6);
        assert_eq!(eval.len(), 3);
        for record in train.records.iter().chain(&eval.records) {
            let image_bytes = std::fs::read(record.image_path(&train.base_dir)).unwrap();
            let step1 = step1_source_for(record, 11).unwrap();
            let run =
                run_chain(&image_bytes, step1, &backend, &ChainOptions::default()).unwrap();
            assert!(!run.trace.target.is_empty(), "{}", record.sample_id);
            assert!(run.prompt_embeddings().unwrap().rows() > 0);
        }
        // Eval split is reasoning-only.
        assert!(eval.records.iter().all(|r| r.category == Category::Reasoning));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn scripts_depend_on_qa_seed_for_simulated_samples() {
        let dir = tmp("seeded");
        let paths = build_benchmark(&dir, 3, 1, 64, 21).unwrap();
        let backend = ScriptedBackend::load(&paths.script).unwrap();
        let train = Manifest::load(&paths.train_manifest).unwrap();
        let referring = train
            .records
            .iter()
            .find(|r| r.category != Category::Reasoning)
            .expect("mixed split has a simulated sample");
        let image_bytes = std::fs::read(referring.image_path(&train.base_dir)).unwrap();
        // Wrong seed renders a different simulated question -> script miss.
        let step1 = step1_source_for(referring, 9999).unwrap();
        let wrong = run_chain(&image_bytes, step1, &backend, &ChainOptions::default());
        let right = run_chain(
            &image_bytes,
            step1_source_for(referring, 21).unwrap(),
            &backend,
            &ChainOptions::default(),
        );
        assert!(right.is_ok());
        // With a different template draw the chain misses the script. (A
        // lucky identical draw would hit; the registry has 8 templates.)
        if let Ok(run) = wrong {
            let right_run = right.unwrap();
            assert_eq!(run.trace.target, right_run.trace.target);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
