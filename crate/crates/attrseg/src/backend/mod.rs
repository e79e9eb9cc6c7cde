//! Multimodal language-model backends. A backend answers a rendered
//! conversation (plus the bound image) with response text, token offsets
//! and per-token embeddings. Two implementations ship: a deterministic
//! scripted mock and a remote HTTP client.

pub mod remote;
pub mod scripted;
pub mod stub;

use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Byte offsets into the response text, half-open.
    pub start: usize,
    pub end: usize,
}

/// One backend completion: text, token offsets and a `num_tokens x d_llm`
/// embedding matrix. Immutable after construction.
#[derive(Clone, Debug)]
pub struct GenerationResult {
    pub text: String,
    pub tokens: Vec<Token>,
    pub embeddings: Mat,
    pub latency_ms: f64,
}

impl GenerationResult {
    pub fn new(
        text: String,
        tokens: Vec<Token>,
        embeddings: Mat,
        latency_ms: f64,
    ) -> Result<Self, BackendError> {
        if tokens.len() != embeddings.rows() {
            return Err(BackendError::Protocol(format!(
                "{} tokens but {} embedding rows",
                tokens.len(),
                embeddings.rows()
            )));
        }
        let mut cursor = 0usize;
        for t in &tokens {
            if t.start < cursor || t.end < t.start || t.end > text.len() {
                return Err(BackendError::Protocol(format!(
                    "token offsets [{}, {}) do not tile the text (cursor {cursor}, len {})",
                    t.start,
                    t.end,
                    text.len()
                )));
            }
            cursor = t.end;
        }
        Ok(Self { text, tokens, embeddings, latency_ms })
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    /// Decoded text for a token span.
    pub fn span_text(&self, span: &Range<usize>) -> String {
        if span.start >= span.end || span.end > self.tokens.len() {
            return String::new();
        }
        let start = self.tokens[span.start].start;
        let end = self.tokens[span.end - 1].end;
        self.text[start..end].to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Scripted,
}

/// Which backend to talk to and what embedding width to expect of it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// Remote endpoint `host:port/path` or the script file path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    pub embedding_width: usize,
    pub model: String,
    /// Which hidden layer embeddings are taken from; carried on the wire.
    #[serde(default = "default_layer")]
    pub layer: String,
}

fn default_layer() -> String {
    "final".to_string()
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.embedding_width == 0 {
            return Err(BackendError::Descriptor("embedding_width must be positive".into()));
        }
        match self.kind {
            BackendKind::Remote if self.endpoint.is_none() => {
                Err(BackendError::Descriptor("remote backend needs an endpoint".into()))
            }
            BackendKind::Scripted if self.script.is_none() => {
                Err(BackendError::Descriptor("scripted backend needs a script path".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no scripted response for key {key}; nearest scripted key: {nearest}")]
    ScriptMiss { key: String, nearest: String },
    #[error("span {start}..{end} out of range for {len} tokens")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("malformed backend payload: {0}")]
    Protocol(String),
    #[error("bad backend descriptor: {0}")]
    Descriptor(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl BackendError {
    /// Transport failures are worth one retry; everything else is not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// Uniform client abstraction over a multimodal language model.
pub trait MllmBackend: Sync {
    /// Generates the continuation for the rendered conversation bound to
    /// the given image bytes.
    fn generate(&self, image: &[u8], rendered_history: &str) -> Result<GenerationResult, BackendError>;

    fn descriptor(&self) -> &BackendDescriptor;
}

/// Row-concatenation of the embedding rows covered by `spans`, order
/// preserved.
pub fn slice_embeddings(
    result: &GenerationResult,
    spans: &[Range<usize>],
) -> Result<Mat, BackendError> {
    let len = result.tokens.len();
    let width = result.embeddings.cols();
    let mut parts: Vec<Mat> = Vec::with_capacity(spans.len());
    for span in spans {
        if span.start > span.end || span.end > len {
            return Err(BackendError::InvalidSpan { start: span.start, end: span.end, len });
        }
        parts.push(result.embeddings.row_slice(span.start, span.end));
    }
    let refs: Vec<&Mat> = parts.iter().collect();
    Ok(Mat::vcat(&refs, width))
}
