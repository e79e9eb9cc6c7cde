//! Run the three-step prompting chain against the scripted demo backend
//! and print the resulting trace.
//!
//! ```bash
//! cargo run -p attrseg --release --example chain_demo
//! ```

use attrseg::backend::scripted::ScriptedBackend;
use attrseg::bundle::write_demo_bundle;
use attrseg::orchestrator::{run_chain, ChainMode, ChainOptions, Step1Source};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("attrseg-example-chain");
    std::fs::remove_dir_all(&dir).ok();
    let paths = write_demo_bundle(&dir)?;
    let backend = ScriptedBackend::load(&paths.script)?;
    let image = std::fs::read(dir.join("images/demo-firepit.ppm"))?;
    let query = "What is the object or part that is hot in this image?";

    for mode in [ChainMode::Merged, ChainMode::Separate] {
        let opts = ChainOptions { mode, ..ChainOptions::default() };
        let run = run_chain(
            &image,
            Step1Source::Live { query: query.to_string() },
            &backend,
            &opts,
        )?;
        println!("--- mode {mode:?}");
        println!("reason answer: {}", run.trace.reason_answer);
        println!("target:        {}", run.trace.target);
        println!("attributes:    {}", run.trace.attributes);
        println!(
            "spans: target {:?}, attributes {:?}",
            run.trace.target_token_span, run.trace.attribute_token_spans
        );
        let prompt = run.prompt_embeddings()?;
        println!("prompt embeddings: {} x {}", prompt.rows(), prompt.cols());
        println!("trace json: {}", run.trace.to_json_line());
    }
    Ok(())
}
