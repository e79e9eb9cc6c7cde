//! Operator entry points binding the modules into runnable workflows.
//! Exit codes: 0 success, 1 usage, 2 chain/backend failure, 3 model/data
//! failure. Every command writes a run manifest (config snapshot, seed,
//! input content hashes) into its output directory before doing work.

pub mod ablate;
pub mod cache;
pub mod eval_cmd;
pub mod infer;
pub mod synth_cmd;
pub mod train_cmd;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::backend::remote::RemoteBackend;
use crate::backend::scripted::ScriptedBackend;
use crate::backend::{BackendDescriptor, BackendKind, MllmBackend};
use crate::orchestrator::{ChainMode, TemplateSet};
use crate::segcore::ScaleSelect;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHAIN: i32 = 2;
pub const EXIT_MODEL_DATA: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Chain(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Chain(_) => EXIT_CHAIN,
            CliError::Data(_) => EXIT_MODEL_DATA,
        }
    }
}

impl From<crate::orchestrator::ChainError> for CliError {
    fn from(e: crate::orchestrator::ChainError) -> Self {
        CliError::Chain(e.to_string())
    }
}

impl From<crate::backend::BackendError> for CliError {
    fn from(e: crate::backend::BackendError) -> Self {
        CliError::Chain(e.to_string())
    }
}

impl From<crate::segcore::SegError> for CliError {
    fn from(e: crate::segcore::SegError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::segcore::CheckpointError> for CliError {
    fn from(e: crate::segcore::CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::training::TrainError> for CliError {
    fn from(e: crate::training::TrainError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::datakit::manifest::ManifestError> for CliError {
    fn from(e: crate::datakit::manifest::ManifestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::bundle::BundleError> for CliError {
    fn from(e: crate::bundle::BundleError) -> Self {
        match e {
            crate::bundle::BundleError::Chain(inner) => CliError::Chain(inner.to_string()),
            crate::bundle::BundleError::Backend(inner) => CliError::Chain(inner.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Merged,
    Separate,
}

impl From<ModeArg> for ChainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Merged => ChainMode::Merged,
            ModeArg::Separate => ChainMode::Separate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ScalesArg {
    All,
    Deepest,
}

impl From<ScalesArg> for ScaleSelect {
    fn from(s: ScalesArg) -> Self {
        match s {
            ScalesArg::All => ScaleSelect::All,
            ScalesArg::Deepest => ScaleSelect::DeepestOnly,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "attrseg",
    version,
    about = "Attribute-prompted reasoning segmentation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug)]
pub struct CacheTracesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Backend descriptor file (JSON).
    #[arg(long)]
    pub backend: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "merged")]
    pub mode: ModeArg,
    /// Prompt template file; defaults to the built-in set.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Bounded concurrent backend requests.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Segment one image for a query: chain, embeddings, mask, overlay.
    Infer(infer::InferArgs),
    /// Train adapters/decoder/projection on cached traces.
    Train(train_cmd::TrainArgs),
    /// Evaluate a checkpoint on a manifest: gIoU/cIoU plus text metrics.
    Eval(eval_cmd::EvalArgs),
    /// Run an ablation suite and write a comparison report.
    Ablate(ablate::AblateArgs),
    /// Generate the synthetic benchmark (or the scripted demo bundle).
    MakeSynth(synth_cmd::MakeSynthArgs),
    /// Precompute chain traces and prompt embeddings for a manifest.
    CacheTraces(CacheTracesArgs),
}

/// Loads a backend from a descriptor file; script paths resolve relative
/// to the descriptor's directory.
pub fn load_backend(path: &Path) -> Result<Box<dyn MllmBackend>, CliError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("backend descriptor {}: {e}", path.display())))?;
    let descriptor: BackendDescriptor = serde_json::from_str(&body)
        .map_err(|e| CliError::Data(format!("backend descriptor {}: {e}", path.display())))?;
    descriptor.validate().map_err(|e| CliError::Data(e.to_string()))?;
    match descriptor.kind {
        BackendKind::Scripted => {
            let script_rel = descriptor.script.clone().expect("validated");
            let script_path = if script_rel.is_absolute() {
                script_rel
            } else {
                path.parent().unwrap_or_else(|| Path::new(".")).join(script_rel)
            };
            Ok(Box::new(ScriptedBackend::load(&script_path)?))
        }
        BackendKind::Remote => Ok(Box::new(
            RemoteBackend::new(descriptor).map_err(|e| CliError::Data(e.to_string()))?,
        )),
    }
}

pub fn load_templates(path: Option<&Path>) -> Result<TemplateSet, CliError> {
    match path {
        Some(p) => TemplateSet::load(p).map_err(|e| CliError::Data(e.to_string())),
        None => Ok(TemplateSet::builtin()),
    }
}

/// Writes `run_manifest.json` before a command does real work: command
/// name, seed, config snapshot and a content hash per input file.
pub fn write_run_manifest<C: Serialize>(
    out_dir: &Path,
    command: &str,
    seed: u64,
    config: &C,
    inputs: &[&Path],
) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct RunManifest<'a, C: Serialize> {
        command: &'a str,
        seed: u64,
        config: &'a C,
        inputs: BTreeMap<String, String>,
    }
    let mut hashed = BTreeMap::new();
    for input in inputs {
        let digest = crate::hash::file_digest(input)
            .map_err(|e| CliError::Data(format!("hashing {}: {e}", input.display())))?;
        hashed.insert(input.display().to_string(), digest);
    }
    std::fs::create_dir_all(out_dir)?;
    let manifest = RunManifest { command, seed, config: &config, inputs: hashed };
    std::fs::write(
        out_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

/// Parses arguments and runs the selected command, returning the process
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes, not usage errors.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Infer(args) => infer::run(&args),
        Command::Train(args) => train_cmd::run(&args),
        Command::Eval(args) => eval_cmd::run(&args),
        Command::Ablate(args) => ablate::run(&args),
        Command::MakeSynth(args) => synth_cmd::run(&args),
        Command::CacheTraces(args) => cache_cmd(&args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn cache_cmd(args: &CacheTracesArgs) -> Result<(), CliError> {
    let manifest = crate::datakit::Manifest::load(&args.manifest)?;
    let backend = load_backend(&args.backend)?;
    let templates = load_templates(args.templates.as_deref())?;
    #[derive(Serialize)]
    struct Snapshot {
        mode: String,
        concurrency: usize,
    }
    write_run_manifest(
        &args.out,
        "cache-traces",
        args.seed,
        &Snapshot { mode: format!("{:?}", args.mode), concurrency: args.concurrency },
        &[args.manifest.as_path(), args.backend.as_path()],
    )?;
    let opts = cache::CacheOptions {
        templates,
        mode: args.mode.into(),
        seed: args.seed,
        concurrency: args.concurrency,
        ..cache::CacheOptions::default()
    };
    let report = cache::cache_traces(&manifest, backend.as_ref(), &args.out, &opts)?;
    println!(
        "cached {} records ({} already present, {} failures); digest {}",
        report.cached,
        report.skipped,
        report.failures.len(),
        cache::cache_digest(&args.out)?
    );
    for (id, message) in &report.failures {
        eprintln!("  failed {id}: {message}");
    }
    if !report.failures.is_empty() {
        return Err(CliError::Chain(format!(
            "{} samples failed to cache; rerun to resume",
            report.failures.len()
        )));
    }
    Ok(())
}
