//! Generate a handful of synthetic scenes and write images, ground-truth
//! overlays and the manifest for inspection.
//!
//! ```bash
//! cargo run -p attrseg --release --example synth_preview
//! ```

use attrseg::datakit::synth::{generate_scene, SynthConfig};
use attrseg::raster;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("attrseg-example-synth");
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir)?;

    let cfg = SynthConfig::new(6, 42, "preview");
    for i in 0..cfg.count {
        let scene = generate_scene(&cfg, i);
        let image_path = dir.join(format!("{}.ppm", scene.record.sample_id));
        raster::write_ppm(&image_path, &scene.image)?;
        let overlay = raster::overlay(&scene.image, &scene.mask, 0.45);
        raster::write_ppm(&dir.join(format!("{}_gt.ppm", scene.record.sample_id)), &overlay)?;
        println!(
            "{}: {:?} target: {} {} at {} (distractor: {} {} at {})",
            scene.record.sample_id,
            scene.record.category,
            scene.target.color_name,
            scene.target.kind.name(),
            scene.target.pos_name,
            scene.distractor.color_name,
            scene.distractor.kind.name(),
            scene.distractor.pos_name,
        );
        println!("  step-2 script: {}", scene.step2_response);
        println!("  step-3 script: {}", scene.step3_response);
    }
    println!("\nwrote previews to {}", dir.display());
    Ok(())
}
