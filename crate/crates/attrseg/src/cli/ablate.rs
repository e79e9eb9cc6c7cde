//! `ablate`: direction checks on the synthetic benchmark. The prompt-steps
//! suite trains one full-chain model and evaluates it under step-1-only,
//! steps-1+2 and full-chain prompt inputs; the scales suite trains
//! single-scale and multi-scale variants and evaluates both. All arms share
//! one seed.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::cache::{self, PromptArm};
use super::eval_cmd::evaluate_manifest;
use super::train_cmd::assemble_samples;
use super::{load_backend, write_run_manifest, CliError};
use crate::datakit::Manifest;
use crate::orchestrator::{ChainMode, TemplateSet};
use crate::segcore::{ModelConfig, ScaleSelect, SegModel};
use crate::training::{fit, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    /// Vary which prompting-step outputs prompt the segmenter.
    PromptSteps,
    /// Single-scale vs multi-scale language injection.
    Scales,
}

#[derive(clap::Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Benchmark bundle directory (from `make-synth`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 600)]
    pub iterations: u64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArmResult {
    pub arm: String,
    pub giou: f64,
    pub ciou: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub suite: String,
    pub seed: u64,
    pub train_iterations: u64,
    pub arms: Vec<ArmResult>,
}

/// Reported full-scale reference values, included in report footers for
/// context (gIoU/cIoU).
pub const PROMPT_STEPS_REFERENCE: &str =
    "reference (full scale): step1 36.7/31.4; steps1+2 50.2/43.8; full chain 54.8/49.9";
pub const SCALES_REFERENCE: &str =
    "reference (full scale): single 55.4/52.5; multi 59.1/52.8";

pub fn write_ablation_report(path: &Path, report: &AblationReport) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# ablation report")?;
    writeln!(f, "suite\t{}", report.suite)?;
    writeln!(f, "seed\t{}", report.seed)?;
    writeln!(f, "train_iterations\t{}", report.train_iterations)?;
    writeln!(f, "arm\tgiou\tciou")?;
    for arm in &report.arms {
        writeln!(f, "{}\t{:.6}\t{:.6}", arm.arm, arm.giou, arm.ciou)?;
    }
    let footer = match report.suite.as_str() {
        "prompt-steps" => PROMPT_STEPS_REFERENCE,
        _ => SCALES_REFERENCE,
    };
    writeln!(f, "# {footer}")?;
    Ok(())
}

pub struct AblationInputs {
    pub train_manifest: Manifest,
    pub eval_manifest: Manifest,
    pub backend: Box<dyn crate::backend::MllmBackend>,
    pub templates: TemplateSet,
}

pub fn load_bundle(data_dir: &Path) -> Result<AblationInputs, CliError> {
    let train_manifest = Manifest::load(&data_dir.join("manifest_train.jsonl"))?;
    let eval_manifest = Manifest::load(&data_dir.join("manifest_eval.jsonl"))?;
    let backend = load_backend(&data_dir.join("backend.json"))?;
    let templates_path = data_dir.join("templates.txt");
    let templates = if templates_path.exists() {
        super::load_templates(Some(&templates_path))?
    } else {
        TemplateSet::builtin()
    };
    Ok(AblationInputs { train_manifest, eval_manifest, backend, templates })
}

fn train_variant(
    inputs: &AblationInputs,
    scales: ScaleSelect,
    cfg: &TrainConfig,
    cache_dir: &Path,
    out_dir: &Path,
) -> Result<SegModel, CliError> {
    let opts = cache::CacheOptions {
        templates: inputs.templates.clone(),
        seed: cfg.seed,
        ..cache::CacheOptions::default()
    };
    let report =
        cache::cache_traces(&inputs.train_manifest, inputs.backend.as_ref(), cache_dir, &opts)?;
    if !report.failures.is_empty() {
        return Err(CliError::Chain(format!(
            "caching failed on {} train samples",
            report.failures.len()
        )));
    }
    let mut model =
        SegModel::new(ModelConfig { scales, seed: cfg.seed, ..ModelConfig::default() });
    let samples =
        assemble_samples(&model, &inputs.train_manifest, cache_dir, PromptArm::FullChain)?;
    fit(&mut model, &samples, cfg, out_dir, None)?;
    Ok(model)
}

fn eval_arm(
    model: &SegModel,
    inputs: &AblationInputs,
    arm: PromptArm,
    label: &str,
    seed: u64,
    cache_dir: &Path,
) -> Result<ArmResult, CliError> {
    let setup = super::eval_cmd::EvalSetup {
        templates: inputs.templates.clone(),
        mode: ChainMode::Merged,
        arm,
        seed,
    };
    let (summary, _) =
        evaluate_manifest(model, &inputs.eval_manifest, inputs.backend.as_ref(), &setup, cache_dir)?;
    Ok(ArmResult { arm: label.to_string(), giou: summary.giou, ciou: summary.ciou })
}

/// Runs a suite against a benchmark bundle and returns the report.
pub fn run_suite(
    suite: Suite,
    data_dir: &Path,
    out_dir: &Path,
    seed: u64,
    iterations: u64,
    batch_size: usize,
    learning_rate: f64,
) -> Result<AblationReport, CliError> {
    let inputs = load_bundle(data_dir)?;
    let cfg = TrainConfig {
        learning_rate,
        batch_size,
        total_iterations: iterations,
        seed,
        ..TrainConfig::default()
    };
    let train_cache = out_dir.join("cache_train");
    let eval_cache = out_dir.join("cache_eval");
    let arms = match suite {
        Suite::PromptSteps => {
            let model = train_variant(
                &inputs,
                ScaleSelect::All,
                &cfg,
                &train_cache,
                &out_dir.join("train_full"),
            )?;
            vec![
                eval_arm(&model, &inputs, PromptArm::ReasonOnly, "step1-only", seed, &eval_cache)?,
                eval_arm(&model, &inputs, PromptArm::NameOnly, "steps1+2", seed, &eval_cache)?,
                eval_arm(&model, &inputs, PromptArm::FullChain, "full-chain", seed, &eval_cache)?,
            ]
        }
        Suite::Scales => {
            let single = train_variant(
                &inputs,
                ScaleSelect::DeepestOnly,
                &cfg,
                &train_cache,
                &out_dir.join("train_single"),
            )?;
            let multi = train_variant(
                &inputs,
                ScaleSelect::All,
                &cfg,
                &train_cache,
                &out_dir.join("train_multi"),
            )?;
            vec![
                eval_arm(&single, &inputs, PromptArm::FullChain, "single-scale", seed, &eval_cache)?,
                eval_arm(&multi, &inputs, PromptArm::FullChain, "multi-scale", seed, &eval_cache)?,
            ]
        }
    };
    Ok(AblationReport {
        suite: match suite {
            Suite::PromptSteps => "prompt-steps".to_string(),
            Suite::Scales => "scales".to_string(),
        },
        seed,
        train_iterations: iterations,
        arms,
    })
}


pub fn run(args: &AblateArgs) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Snapshot {
        suite: String,
        iterations: u64,
        batch_size: usize,
        learning_rate: f64,
    }
    write_run_manifest(
        &args.out,
        "ablate",
        args.seed,
        &Snapshot {
            suite: format!("{:?}", args.suite),
            iterations: args.iterations,
            batch_size: args.batch_size,
            learning_rate: args.learning_rate,
        },
        &[
            args.data.join("manifest_train.jsonl").as_path(),
            args.data.join("manifest_eval.jsonl").as_path(),
        ],
    )?;
    let report = run_suite(
        args.suite,
        &args.data,
        &args.out,
        args.seed,
        args.iterations,
        args.batch_size,
        args.learning_rate,
    )?;
    let path = args.out.join("ablation_report.txt");
    write_ablation_report(&path, &report)?;
    for arm in &report.arms {
        println!("{}\tgIoU {:.4}\tcIoU {:.4}", arm.arm, arm.giou, arm.ciou);
    }
    println!("report -> {}", path.display());
    Ok(())
}
