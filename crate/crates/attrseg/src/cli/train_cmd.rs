//! `train`: assemble cached traces + frozen-encoder pyramids into training
//! samples and run the optimization loop. The backend is only contacted to
//! fill missing cache entries.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::cache::{self, CacheRecord, PromptArm};
use super::{load_backend, write_run_manifest, CliError, ScalesArg};
use crate::datakit::Manifest;
use crate::segcore::{ImageTensor, ModelConfig, SegModel};
use crate::training::{bitmap_to_column, fit, TrainConfig, TrainSample};

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of cached traces (from `cache-traces`).
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Backend descriptor; only needed when cache entries are missing.
    #[arg(long)]
    pub backend: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub iterations: u64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, value_enum, default_value = "all")]
    pub scales: ScalesArg,
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
    /// Resume from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Builds training samples from a manifest and its trace cache: pyramid
/// from the frozen encoder, prompt rows from the cache, mask from the
/// record.
pub fn assemble_samples(
    model: &SegModel,
    manifest: &Manifest,
    cache_dir: &Path,
    arm: PromptArm,
) -> Result<Vec<TrainSample>, CliError> {
    let mut samples = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        let cache_path = CacheRecord::path_for(cache_dir, &record.sample_id);
        let cached = CacheRecord::load(&cache_path).ok_or_else(|| {
            CliError::Data(format!(
                "no cached trace for {} (expected {}); run cache-traces first",
                record.sample_id,
                cache_path.display()
            ))
        })?;
        let raw_prompt = cached.prompt_for(arm).ok_or_else(|| {
            CliError::Data(format!(
                "sample {} has no {} embeddings (step 1 was simulated)",
                record.sample_id,
                arm.label()
            ))
        })?;
        let image = crate::raster::read_ppm(&record.image_path(&manifest.base_dir))
            .map_err(|e| CliError::Data(format!("image for {}: {e}", record.sample_id)))?;
        let gt_mask = record.load_mask(&manifest.base_dir)?;
        if gt_mask.height() != image.h || gt_mask.width() != image.w {
            return Err(crate::datakit::manifest::ManifestError::MaskShape {
                sample_id: record.sample_id.clone(),
                mask_h: gt_mask.height(),
                mask_w: gt_mask.width(),
                img_h: image.h,
                img_w: image.w,
            }
            .into());
        }
        let pyramid = model.encode_image(&ImageTensor::from(&image))?;
        samples.push(TrainSample {
            sample_id: record.sample_id.clone(),
            pyramid,
            raw_prompt,
            gt_flat: bitmap_to_column(&gt_mask),
            gt_mask,
        });
    }
    Ok(samples)
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let manifest = Manifest::load(&args.manifest)?;
    if manifest.is_empty() {
        return Err(CliError::Data("manifest has no samples".into()));
    }

    // Fill missing cache entries when a backend is available.
    let missing: Vec<&str> = manifest
        .records
        .iter()
        .filter(|r| CacheRecord::load(&CacheRecord::path_for(&args.cache, &r.sample_id)).is_none())
        .map(|r| r.sample_id.as_str())
        .collect();
    if !missing.is_empty() {
        match &args.backend {
            Some(backend_path) => {
                let backend = load_backend(backend_path)?;
                let opts =
                    cache::CacheOptions { seed: args.seed, ..cache::CacheOptions::default() };
                let report =
                    cache::cache_traces(&manifest, backend.as_ref(), &args.cache, &opts)?;
                if !report.failures.is_empty() {
                    return Err(CliError::Chain(format!(
                        "failed to cache {} samples",
                        report.failures.len()
                    )));
                }
            }
            None => {
                return Err(CliError::Data(format!(
                    "{} samples missing from cache (e.g. {}); pass --backend to fill them",
                    missing.len(),
                    missing[0]
                )));
            }
        }
    }

    let model_config =
        ModelConfig { scales: args.scales.into(), seed: args.seed, ..ModelConfig::default() };
    let train_config = TrainConfig {
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        total_iterations: args.iterations,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
        ..TrainConfig::default()
    };

    #[derive(Serialize)]
    struct Snapshot<'a> {
        model: &'a ModelConfig,
        train: &'a TrainConfig,
    }
    write_run_manifest(
        &args.out,
        "train",
        args.seed,
        &Snapshot { model: &model_config, train: &train_config },
        &[args.manifest.as_path()],
    )?;

    let mut model = SegModel::new(model_config);
    let samples = assemble_samples(&model, &manifest, &args.cache, PromptArm::FullChain)?;
    let report = fit(&mut model, &samples, &train_config, &args.out, args.resume.as_deref())?;
    let train_giou = crate::training::training_giou(&model, &samples)?;
    println!(
        "trained {} iterations on {} samples; train gIoU {:.4}; checkpoint {}",
        train_config.total_iterations,
        samples.len(),
        train_giou,
        report.final_checkpoint.display()
    );
    Ok(())
}
