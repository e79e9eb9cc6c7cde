//! `infer`: run the chain on one image + query, prompt the segmentation
//! model with the extracted embeddings, and write the mask, an overlay
//! visualization and the trace record.

use std::path::PathBuf;

use serde::Serialize;

use super::{load_backend, load_templates, write_run_manifest, CliError, ModeArg};
use crate::orchestrator::{run_chain, ChainError, ChainOptions, Step1Source};
use crate::segcore::{ImageTensor, SegModel};

#[derive(clap::Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Backend descriptor file (JSON).
    #[arg(long)]
    pub backend: PathBuf,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "merged")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &InferArgs) -> Result<(), CliError> {
    if args.query.trim().is_empty() {
        return Err(CliError::Usage("--query must be non-empty".into()));
    }
    // Validate every input before any output is written, so failures leave
    // no partial artifacts behind.
    let (model, _) = SegModel::load(&args.checkpoint)?;
    let backend = load_backend(&args.backend)?;
    let templates = load_templates(args.templates.as_deref())?;
    let image = crate::raster::read_ppm(&args.image)
        .map_err(|e| CliError::Data(format!("image {}: {e}", args.image.display())))?;
    let image_bytes = std::fs::read(&args.image)?;

    #[derive(Serialize)]
    struct Snapshot {
        query: String,
        mode: String,
    }
    write_run_manifest(
        &args.out,
        "infer",
        args.seed,
        &Snapshot { query: args.query.clone(), mode: format!("{:?}", args.mode) },
        &[args.image.as_path(), args.checkpoint.as_path(), args.backend.as_path()],
    )?;

    let opts = ChainOptions { templates, mode: args.mode.into(), ..ChainOptions::default() };
    let chain = run_chain(
        &image_bytes,
        Step1Source::Live { query: args.query.clone() },
        backend.as_ref(),
        &opts,
    );
    let run = match chain {
        Ok(run) => run,
        Err(e) => {
            // Preserve whatever the chain learned before failing.
            if let ChainError::Backend { partial, .. } | ChainError::ParseTarget { partial, .. } = &e
            {
                let body = serde_json::json!({
                    "user_query": partial.user_query,
                    "reason_answer": partial.reason_answer,
                    "error": e.to_string(),
                });
                std::fs::write(
                    args.out.join("partial_trace.json"),
                    serde_json::to_string_pretty(&body).expect("serializes"),
                )?;
            }
            return Err(e.into());
        }
    };

    let raw = run.prompt_embeddings()?;
    let tensor = ImageTensor::from(&image);
    let (logits, h, w) = model.forward(&tensor, &raw)?;
    let mask = SegModel::logits_to_mask(&logits, h, w);

    crate::raster::write_pgm_mask(&args.out.join("mask.pgm"), &mask)?;
    let overlay = crate::raster::overlay(&image, &mask, 0.5);
    crate::raster::write_ppm(&args.out.join("overlay.ppm"), &overlay)?;
    // One record per run; rewritten (not appended) so reruns are identical.
    std::fs::write(args.out.join("trace.jsonl"), format!("{}\n", run.trace.to_json_line()))?;
    println!(
        "target: {:?}; mask {}x{} with {} foreground pixels -> {}",
        run.trace.target,
        h,
        w,
        mask.count_ones(),
        args.out.display()
    );
    Ok(())
}
