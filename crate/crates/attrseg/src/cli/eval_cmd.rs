//! `eval`: run the chain for every manifest sample, segment, and score
//! against ground truth: gIoU/cIoU for masks, ROUGE-L/CIDEr for the
//! reasoning answers against reference descriptions.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::cache::{self, CacheRecord, PromptArm};
use super::{load_backend, load_templates, write_run_manifest, CliError, ModeArg};
use crate::backend::MllmBackend;
use crate::datakit::Manifest;
use crate::metrics::{evaluate, write_report, EvalRow, EvalSummary};
use crate::orchestrator::TemplateSet;
use crate::segcore::{ImageTensor, SegModel};

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Backend descriptor file (JSON).
    #[arg(long)]
    pub backend: PathBuf,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "merged")]
    pub mode: ModeArg,
    /// Which prompting-step outputs feed the segmentation model.
    #[arg(long, value_enum, default_value = "full-chain")]
    pub arm: PromptArm,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Per-sample report row: (sample id, IoU, optional ROUGE-L).
pub type PerSampleScores = Vec<(String, f64, Option<f64>)>;

/// How to chain and prompt during evaluation.
pub struct EvalSetup {
    pub templates: TemplateSet,
    pub mode: crate::orchestrator::ChainMode,
    pub arm: PromptArm,
    pub seed: u64,
}

/// Chains + segments every sample and returns scored rows. The trace cache
/// under `cache_dir` is reused across arms and reruns.
pub fn evaluate_manifest(
    model: &SegModel,
    manifest: &Manifest,
    backend: &dyn MllmBackend,
    setup: &EvalSetup,
    cache_dir: &Path,
) -> Result<(EvalSummary, PerSampleScores), CliError> {
    let arm = setup.arm;
    let opts = cache::CacheOptions {
        templates: setup.templates.clone(),
        mode: setup.mode,
        seed: setup.seed,
        ..cache::CacheOptions::default()
    };
    let report = cache::cache_traces(manifest, backend, cache_dir, &opts)?;
    if !report.failures.is_empty() {
        return Err(CliError::Chain(format!(
            "chain failed on {} samples (first: {} -> {})",
            report.failures.len(),
            report.failures[0].0,
            report.failures[0].1
        )));
    }
    let mut rows = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        let cached = CacheRecord::load(&CacheRecord::path_for(cache_dir, &record.sample_id))
            .ok_or_else(|| CliError::Data(format!("cache record missing for {}", record.sample_id)))?;
        let raw = cached.prompt_for(arm).ok_or_else(|| {
            CliError::Data(format!(
                "sample {} has no {} embeddings (step 1 was simulated)",
                record.sample_id,
                arm.label()
            ))
        })?;
        let image = crate::raster::read_ppm(&record.image_path(&manifest.base_dir))
            .map_err(|e| CliError::Data(format!("image for {}: {e}", record.sample_id)))?;
        let gt = record.load_mask(&manifest.base_dir)?;
        let (logits, h, w) = model.forward(&ImageTensor::from(&image), &raw)?;
        let pred = SegModel::logits_to_mask(&logits, h, w);
        let text = record
            .description
            .clone()
            .map(|reference| (cached.trace.reason_answer.clone(), vec![reference]));
        rows.push(EvalRow { sample_id: record.sample_id.clone(), pred, gt, text });
    }
    evaluate(&rows).map_err(|e| CliError::Data(e.to_string()))
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let manifest = Manifest::load(&args.manifest)?;
    if manifest.is_empty() {
        return Err(CliError::Data("manifest has no samples".into()));
    }
    let (model, _) = SegModel::load(&args.checkpoint)?;
    let backend = load_backend(&args.backend)?;
    let templates = load_templates(args.templates.as_deref())?;

    #[derive(Serialize)]
    struct Snapshot {
        arm: String,
        mode: String,
    }
    write_run_manifest(
        &args.out,
        "eval",
        args.seed,
        &Snapshot { arm: args.arm.label().to_string(), mode: format!("{:?}", args.mode) },
        &[args.manifest.as_path(), args.checkpoint.as_path(), args.backend.as_path()],
    )?;

    let cache_dir = args.out.join("cache");
    let setup =
        EvalSetup { templates, mode: args.mode.into(), arm: args.arm, seed: args.seed };
    let (summary, per_sample) = evaluate_manifest(&model, &manifest, backend.as_ref(), &setup, &cache_dir)?;
    write_report(&args.out.join("report.tsv"), &summary, &per_sample)?;
    println!(
        "evaluated {} samples: gIoU {:.4}, cIoU {:.4}{}{}",
        summary.samples,
        summary.giou,
        summary.ciou,
        summary.rouge_l.map(|v| format!(", ROUGE-L {v:.4}")).unwrap_or_default(),
        summary.cider.map(|v| format!(", CIDEr {v:.4}")).unwrap_or_default(),
    );
    Ok(())
}
