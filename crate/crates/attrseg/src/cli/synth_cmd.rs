//! `make-synth`: generate the synthetic attribute benchmark bundle, or the
//! scripted fire-pit demo bundle with `--demo`.

use std::path::PathBuf;

use serde::Serialize;

use super::{write_run_manifest, CliError};
use crate::datakit::synth::DEFAULT_COLORS;
use crate::segcore::{ModelConfig, SegModel};

#[derive(clap::Args, Debug)]
pub struct MakeSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training samples to generate.
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    /// Evaluation samples (reasoning-only split).
    #[arg(long, default_value_t = 100)]
    pub eval_count: usize,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attribute color vocabulary, comma separated.
    #[arg(long)]
    pub colors: Option<String>,
    /// Write the scripted demo bundle (one fire-pit scene plus a fresh
    /// checkpoint) instead of the benchmark.
    #[arg(long, default_value_t = false)]
    pub demo: bool,
}

#[derive(Serialize)]
struct Snapshot {
    count: usize,
    eval_count: usize,
    image_size: usize,
    demo: bool,
    colors: Option<String>,
}

pub fn run(args: &MakeSynthArgs) -> Result<(), CliError> {
    if !args.image_size.is_multiple_of(32) || args.image_size == 0 {
        return Err(CliError::Usage(format!(
            "--image-size must be a positive multiple of 32, got {}",
            args.image_size
        )));
    }
    if let Some(colors) = &args.colors {
        let known: Vec<&str> = DEFAULT_COLORS.iter().map(|(n, _)| *n).collect();
        for name in colors.split(',') {
            if !known.contains(&name.trim()) {
                return Err(CliError::Usage(format!(
                    "unknown color {name:?}; available: {}",
                    known.join(", ")
                )));
            }
        }
    }
    write_run_manifest(
        &args.out,
        "make-synth",
        args.seed,
        &Snapshot {
            count: args.count,
            eval_count: args.eval_count,
            image_size: args.image_size,
            demo: args.demo,
            colors: args.colors.clone(),
        },
        &[],
    )?;

    if args.demo {
        let paths = crate::bundle::write_demo_bundle(&args.out)?;
        // A fresh seeded checkpoint so `infer` can run out of the box.
        let model = SegModel::new(ModelConfig { seed: args.seed, ..ModelConfig::default() });
        let ckpt = args.out.join("ckpt_demo.bin");
        model.save(&ckpt, &std::collections::BTreeMap::new())?;
        println!(
            "demo bundle -> {} (image, script, templates, manifest, checkpoint)",
            paths.dir.display()
        );
        return Ok(());
    }

    let paths = if let Some(colors) = &args.colors {
        let palette: Vec<(String, [u8; 3])> = DEFAULT_COLORS
            .iter()
            .filter(|(n, _)| colors.split(',').any(|c| c.trim() == *n))
            .map(|(n, c)| (n.to_string(), *c))
            .collect();
        if palette.len() < 2 {
            return Err(CliError::Usage("need at least two colors".into()));
        }
        crate::bundle::build_benchmark_with_colors(
            &args.out,
            args.count,
            args.eval_count,
            args.image_size,
            args.seed,
            palette,
        )?
    } else {
        crate::bundle::build_benchmark(
            &args.out,
            args.count,
            args.eval_count,
            args.image_size,
            args.seed,
        )?
    };
    println!(
        "benchmark bundle -> {} ({} train / {} eval; script {})",
        paths.dir.display(),
        args.count,
        args.eval_count,
        paths.script.display()
    );
    Ok(())
}
