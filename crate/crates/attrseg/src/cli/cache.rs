//! Trace + embedding cache: one JSON record per sample holding the chain
//! trace and the sliced raw embeddings. Idempotent — complete records are
//! skipped on rerun — and resumable: failures are reported, not fatal.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::MllmBackend;
use crate::bundle::step1_source_for;
use crate::datakit::manifest::Manifest;
use crate::orchestrator::{run_chain, ChainMode, ChainOptions, CoTTrace, SpanMode, TemplateSet};
use crate::tensor::Mat;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CacheRecord {
    pub sample_id: String,
    pub trace: CoTTrace,
    pub d_llm: usize,
    /// Whole step-1 answer embeddings; absent when step 1 was simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason_rows: Option<Vec<Vec<f64>>>,
    pub target_rows: Vec<Vec<f64>>,
    pub attribute_rows: Vec<Vec<f64>>,
}

impl CacheRecord {
    pub fn path_for(cache_dir: &Path, sample_id: &str) -> PathBuf {
        cache_dir.join(format!("trace_{sample_id}.json"))
    }

    pub fn load(path: &Path) -> Option<Self> {
        let body = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&body).ok()
    }

    fn rows_to_mat(rows: &[Vec<f64>], width: usize) -> Mat {
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            data.extend_from_slice(row);
        }
        Mat::from_vec(rows.len(), width, data)
    }

    /// Raw prompt matrix for an evaluation arm.
    pub fn prompt_for(&self, arm: PromptArm) -> Option<Mat> {
        let target = Self::rows_to_mat(&self.target_rows, self.d_llm);
        match arm {
            PromptArm::ReasonOnly => self
                .reason_rows
                .as_ref()
                .map(|rows| Self::rows_to_mat(rows, self.d_llm)),
            PromptArm::NameOnly => Some(target),
            PromptArm::FullChain => {
                let attrs = Self::rows_to_mat(&self.attribute_rows, self.d_llm);
                Some(Mat::vcat(&[&target, &attrs], self.d_llm))
            }
        }
    }
}

/// Which prompting-step outputs feed the segmentation model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PromptArm {
    /// The whole step-1 reason answer.
    ReasonOnly,
    /// The step-2 target name only.
    NameOnly,
    /// Target name plus step-3 attributes (the deployment configuration).
    FullChain,
}

impl PromptArm {
    pub fn label(&self) -> &'static str {
        match self {
            PromptArm::ReasonOnly => "step1-only",
            PromptArm::NameOnly => "steps1+2",
            PromptArm::FullChain => "full-chain",
        }
    }
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

#[derive(Debug, Default)]
pub struct CacheReport {
    pub cached: usize,
    pub skipped: usize,
    pub failures: Vec<(String, String)>,
    /// Backend calls actually made (0 on a fully cached rerun).
    pub backend_calls: usize,
}

pub struct CacheOptions {
    pub templates: TemplateSet,
    pub mode: ChainMode,
    pub span_mode: SpanMode,
    pub seed: u64,
    pub concurrency: usize,
}

impl Default for CacheOptions {
    fn default() -> Self {
        Self {
            templates: TemplateSet::builtin(),
            mode: ChainMode::Merged,
            span_mode: SpanMode::Whole,
            seed: 0,
            concurrency: 4,
        }
    }
}

/// Counts generate() calls that reach the wrapped backend.
struct CountingBackend<'a> {
    inner: &'a dyn MllmBackend,
    calls: &'a AtomicUsize,
}

impl MllmBackend for CountingBackend<'_> {
    fn generate(
        &self,
        image: &[u8],
        rendered_history: &str,
    ) -> Result<crate::backend::GenerationResult, crate::backend::BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(image, rendered_history)
    }

    fn descriptor(&self) -> &crate::backend::BackendDescriptor {
        self.inner.descriptor()
    }
}

/// Caches one record per manifest sample: run the chain, slice the target
/// and attribute embeddings, write JSON.
pub fn cache_traces(
    manifest: &Manifest,
    backend: &dyn MllmBackend,
    cache_dir: &Path,
    opts: &CacheOptions,
) -> std::io::Result<CacheReport> {
    std::fs::create_dir_all(cache_dir)?;
    let chain_opts = ChainOptions {
        templates: opts.templates.clone(),
        mode: opts.mode,
        attribute_span_mode: opts.span_mode,
        ..ChainOptions::default()
    };

    let next = AtomicUsize::new(0);
    let report = Mutex::new(CacheReport::default());
    let calls = AtomicUsize::new(0);
    let counting = CountingBackend { inner: backend, calls: &calls };
    let workers = opts.concurrency.max(1).min(manifest.records.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(record) = manifest.records.get(i) else { break };
                let path = CacheRecord::path_for(cache_dir, &record.sample_id);
                if CacheRecord::load(&path).is_some() {
                    report.lock().expect("report lock").skipped += 1;
                    continue;
                }
                let outcome = (|| -> Result<CacheRecord, String> {
                    let image_bytes = std::fs::read(record.image_path(&manifest.base_dir))
                        .map_err(|e| format!("image: {e}"))?;
                    let step1 =
                        step1_source_for(record, opts.seed).map_err(|e| e.to_string())?;
                    let run = run_chain(&image_bytes, step1, &counting, &chain_opts)
                        .map_err(|e| e.to_string())?;
                    let target_span =
                        run.trace.target_token_span.0..run.trace.target_token_span.1;
                    let target = crate::backend::slice_embeddings(
                        &run.target_result,
                        std::slice::from_ref(&target_span),
                    )
                    .map_err(|e| e.to_string())?;
                    let spans: Vec<_> = run
                        .trace
                        .attribute_token_spans
                        .iter()
                        .map(|&(s, e)| s..e)
                        .collect();
                    let attrs =
                        crate::backend::slice_embeddings(&run.attribute_result, &spans)
                            .map_err(|e| e.to_string())?;
                    let reason = run.reason_embeddings().map_err(|e| e.to_string())?;
                    Ok(CacheRecord {
                        sample_id: record.sample_id.clone(),
                        trace: run.trace,
                        d_llm: target.cols(),
                        reason_rows: reason.as_ref().map(mat_to_rows),
                        target_rows: mat_to_rows(&target),
                        attribute_rows: mat_to_rows(&attrs),
                    })
                })();
                match outcome {
                    Ok(cache_record) => {
                        let body =
                            serde_json::to_string(&cache_record).expect("record serializes");
                        match std::fs::write(&path, body) {
                            Ok(()) => report.lock().expect("report lock").cached += 1,
                            Err(e) => report
                                .lock()
                                .expect("report lock")
                                .failures
                                .push((record.sample_id.clone(), e.to_string())),
                        }
                    }
                    Err(message) => report
                        .lock()
                        .expect("report lock")
                        .failures
                        .push((record.sample_id.clone(), message)),
                }
            });
        }
    });
    let mut report = report.into_inner().expect("report lock");
    report.failures.sort();
    report.backend_calls = calls.load(Ordering::SeqCst);
    Ok(report)
}

/// Stable digest of a cache directory's contents.
pub fn cache_digest(cache_dir: &Path) -> std::io::Result<String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(cache_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    names.sort();
    let mut acc = Vec::new();
    for path in names {
        acc.extend_from_slice(path.file_name().unwrap_or_default().as_encoded_bytes());
        acc.push(0x1f);
        acc.extend_from_slice(&std::fs::read(&path)?);
        acc.push(0x1e);
    }
    Ok(crate::hash::fnv_digest(&acc))
}
