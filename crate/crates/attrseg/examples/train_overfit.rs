//! End-to-end training demo: generate a tiny synthetic set, cache traces
//! through the scripted backend, overfit the adapters/decoder, and report
//! train gIoU.
//!
//! ```bash
//! cargo run -p attrseg --release --example train_overfit
//! ```

use attrseg::bundle::build_benchmark;
use attrseg::cli::cache::{cache_traces, CacheOptions, PromptArm};
use attrseg::cli::load_backend;
use attrseg::cli::train_cmd::assemble_samples;
use attrseg::datakit::Manifest;
use attrseg::segcore::{ModelConfig, SegModel};
use attrseg::training::{fit, training_giou, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("attrseg-example-overfit");
    std::fs::remove_dir_all(&dir).ok();

    let started = std::time::Instant::now();
    println!("generating 10 synthetic samples...");
    let paths = build_benchmark(&dir, 10, 2, 64, 7)?;
    let backend = load_backend(&paths.backend_descriptor)?;
    let manifest = Manifest::load(&paths.train_manifest)?;

    println!("caching traces through the scripted backend...");
    let cache_dir = dir.join("cache");
    let opts = CacheOptions { seed: 7, ..CacheOptions::default() };
    let report = cache_traces(&manifest, backend.as_ref(), &cache_dir, &opts)?;
    println!("  cached {} records, {} failures", report.cached, report.failures.len());

    let mut model = SegModel::new(ModelConfig { seed: 7, ..ModelConfig::default() });
    let samples = assemble_samples(&model, &manifest, &cache_dir, PromptArm::FullChain)?;

    let cfg = TrainConfig {
        total_iterations: 500,
        batch_size: 8,
        seed: 7,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    println!(
        "training {} iterations (batch {}, lr {})...",
        cfg.total_iterations, cfg.batch_size, cfg.learning_rate
    );
    let fit_report = fit(&mut model, &samples, &cfg, &dir.join("train"), None)?;
    for record in fit_report.records.iter().step_by(50) {
        println!(
            "  iter {:>4}: total {:.4} (bce {:.4}, dice {:.4})",
            record.iteration, record.total, record.bce, record.dice
        );
    }
    if let Some(last) = fit_report.records.last() {
        println!("  iter {:>4}: total {:.4} (final)", last.iteration, last.total);
    }
    let giou = training_giou(&model, &samples)?;
    println!(
        "train gIoU {giou:.4} after {:.1}s; checkpoint {}",
        started.elapsed().as_secs_f64(),
        fit_report.final_checkpoint.display()
    );
    Ok(())
}
