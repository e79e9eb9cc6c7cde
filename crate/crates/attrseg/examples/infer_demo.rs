//! Full inference pipeline on the demo bundle: chain -> embeddings ->
//! segmentation -> mask + overlay files.
//!
//! ```bash
//! cargo run -p attrseg --release --example infer_demo
//! ```

use attrseg::cli::infer::{self, InferArgs};
use attrseg::cli::ModeArg;
use attrseg::segcore::{ModelConfig, SegModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("attrseg-example-infer");
    std::fs::remove_dir_all(&dir).ok();
    let paths = attrseg::bundle::write_demo_bundle(&dir.join("bundle"))?;

    // Fresh seeded checkpoint; mask quality is untrained, the point is the
    // full pipeline wiring.
    let checkpoint = dir.join("ckpt.bin");
    SegModel::new(ModelConfig::default()).save(&checkpoint, &Default::default())?;

    let args = InferArgs {
        image: dir.join("bundle/images/demo-firepit.ppm"),
        query: "What is the object or part that is hot in this image?".to_string(),
        checkpoint,
        backend: paths.backend_descriptor.clone(),
        templates: Some(paths.templates.clone()),
        mode: ModeArg::Merged,
        seed: 0,
        out: dir.join("out"),
    };
    infer::run(&args).map_err(|e| format!("infer failed: {e}"))?;
    println!("outputs:");
    for name in ["mask.pgm", "overlay.ppm", "trace.jsonl", "run_manifest.json"] {
        println!("  {}", dir.join("out").join(name).display());
    }
    Ok(())
}
