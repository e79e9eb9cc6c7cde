//! Structured record of one completed chain, plus the line-delimited trace
//! log. Raw step-2 text is preserved for audit.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanMode {
    /// One span covering the whole attribute text.
    #[default]
    Whole,
    /// One span per attribute sentence.
    Sentence,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoTTrace {
    pub user_query: String,
    pub reason_answer: String,
    pub target: String,
    pub attributes: String,
    /// Half-open token index range into the step-2 response tokens.
    pub target_token_span: (usize, usize),
    /// Half-open token index ranges into the step-3 response tokens.
    pub attribute_token_spans: Vec<(usize, usize)>,
    pub merged_steps_2_3: bool,
    /// Raw step-2 response, kept for audit.
    pub step2_raw: String,
    /// Additional targets the parser discarded (first one wins).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discarded_targets: Vec<String>,
    pub attribute_span_mode: SpanMode,
    /// Step 1 was simulated from a Q-A template rather than generated.
    pub simulated_step1: bool,
    /// Total backend latency across the chain.
    pub latency_ms: f64,
}

impl CoTTrace {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Appends one trace per line to a log file.
pub struct TraceLog {
    file: std::fs::File,
}

impl TraceLog {
    pub fn append_to(path: &Path) -> std::io::Result<Self> {
        Ok(Self { file: std::fs::OpenOptions::new().create(true).append(true).open(path)? })
    }

    pub fn write(&mut self, trace: &CoTTrace) -> std::io::Result<()> {
        writeln!(self.file, "{}", trace.to_json_line())
    }
}
