//! Miniature ablation: a small benchmark bundle, short trainings, and the
//! comparison report for both suites. The full-size run lives in the
//! acceptance suite; this is the quick look.
//!
//! ```bash
//! cargo run -p attrseg --release --example ablate_mini
//! ```

use attrseg::bundle::build_benchmark;
use attrseg::cli::ablate::{run_suite, write_ablation_report, Suite};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("attrseg-example-ablate");
    std::fs::remove_dir_all(&dir).ok();
    let data = dir.join("data");
    println!("generating 96 train / 24 eval samples...");
    build_benchmark(&data, 96, 24, 64, 3)?;

    for suite in [Suite::PromptSteps, Suite::Scales] {
        let label = match suite {
            Suite::PromptSteps => "prompt-steps",
            Suite::Scales => "scales",
        };
        println!("--- suite {label} (300 iterations)");
        let out = dir.join(format!("out_{label}"));
        let report = run_suite(suite, &data, &out, 3, 300, 8, 1e-3)
            .map_err(|e| format!("suite failed: {e}"))?;
        for arm in &report.arms {
            println!("  {:<12} gIoU {:.4}  cIoU {:.4}", arm.arm, arm.giou, arm.ciou);
        }
        let path = out.join("ablation_report.txt");
        write_ablation_report(&path, &report)?;
        println!("  report -> {}", path.display());
    }
    Ok(())
}
