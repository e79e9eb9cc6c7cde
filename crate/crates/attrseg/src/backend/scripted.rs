//! Deterministic scripted backend. Responses are looked up by a stable hash
//! of (image digest, rendered history); token embeddings are a seeded
//! pseudorandom function of each token string, so identical inputs always
//! produce bit-identical results. A recording wrapper captures live traffic
//! into a script file.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendError, BackendKind, GenerationResult, MllmBackend, Token};
use crate::hash::{fnv64, fnv_digest};
use crate::rng::SplitMix64;
use crate::tensor::Mat;

pub const MOCK_EMBED_SEED: u64 = 0xA77E_5EED;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub image_digest: String,
    pub history: String,
    pub response: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Script {
    pub version: u32,
    pub model: String,
    pub embedding_width: usize,
    pub embed_seed: u64,
    pub entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn new(model: &str, embedding_width: usize) -> Self {
        Self {
            version: 1,
            model: model.to_string(),
            embedding_width,
            embed_seed: MOCK_EMBED_SEED,
            entries: Vec::new(),
        }
    }

    pub fn key(image_digest: &str, history: &str) -> String {
        let mut bytes = Vec::with_capacity(image_digest.len() + history.len() + 1);
        bytes.extend_from_slice(image_digest.as_bytes());
        bytes.push(0x1e);
        bytes.extend_from_slice(history.as_bytes());
        format!("{:016x}", fnv64(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body).map_err(|e| BackendError::Protocol(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let body = serde_json::to_string_pretty(self).expect("script serializes");
        std::fs::write(path, body)?;
        Ok(())
    }
}

/// Whitespace/punctuation tokenizer with byte offsets. Alphanumeric runs
/// (plus inner apostrophes) are words; every other non-space character is
/// its own token.
pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphanumeric() {
            let start = i;
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'\'')
            {
                i += 1;
            }
            tokens.push(Token { text: text[start..i].to_string(), start, end: i });
        } else {
            // One token per punctuation byte; multi-byte chars stay whole.
            let ch_len = text[i..].chars().next().map_or(1, char::len_utf8);
            tokens.push(Token { text: text[i..i + ch_len].to_string(), start: i, end: i + ch_len });
            i += ch_len;
        }
    }
    tokens
}

/// Unit-variance pseudorandom embedding for a token, keyed on the
/// lowercased token text and the script seed.
pub fn token_embedding(token: &str, width: usize, embed_seed: u64) -> Vec<f64> {
    let mut gen = SplitMix64::new(fnv64(token.to_lowercase().as_bytes()) ^ embed_seed);
    (0..width).map(|_| gen.next_normal()).collect()
}

/// Builds a full GenerationResult for a response text: mock tokenization
/// plus seeded embeddings.
pub fn mock_generation(
    text: &str,
    width: usize,
    embed_seed: u64,
    latency_ms: f64,
) -> Result<GenerationResult, BackendError> {
    let tokens = tokenize_with_offsets(text);
    let mut data = Vec::with_capacity(tokens.len() * width);
    for t in &tokens {
        data.extend(token_embedding(&t.text, width, embed_seed));
    }
    let embeddings = Mat::from_vec(tokens.len(), width, data);
    GenerationResult::new(text.to_string(), tokens, embeddings, latency_ms)
}

pub struct ScriptedBackend {
    descriptor: BackendDescriptor,
    script: Script,
    by_key: HashMap<String, usize>,
}

impl ScriptedBackend {
    pub fn new(script: Script, script_path: Option<&Path>) -> Self {
        let by_key = script
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (Script::key(&e.image_digest, &e.history), i))
            .collect();
        let descriptor = BackendDescriptor {
            kind: BackendKind::Scripted,
            endpoint: None,
            script: script_path.map(Path::to_path_buf),
            embedding_width: script.embedding_width,
            model: script.model.clone(),
            layer: "final".to_string(),
        };
        Self { descriptor, script, by_key }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(Script::load(path)?, Some(path)))
    }

    /// Longest-common-prefix nearest entry, same-image entries preferred.
    fn nearest_key(&self, image_digest: &str, history: &str) -> String {
        let mut best: Option<(bool, usize, &ScriptEntry)> = None;
        for entry in &self.script.entries {
            let same_image = entry.image_digest == image_digest;
            let prefix = entry
                .history
                .bytes()
                .zip(history.bytes())
                .take_while(|(a, b)| a == b)
                .count();
            let candidate = (same_image, prefix, entry);
            let better = match &best {
                None => true,
                Some((bi, bp, _)) => (same_image, prefix) > (*bi, *bp),
            };
            if better {
                best = Some(candidate);
            }
        }
        match best {
            Some((_, _, e)) => Script::key(&e.image_digest, &e.history),
            None => "<empty script>".to_string(),
        }
    }
}

impl MllmBackend for ScriptedBackend {
    fn generate(&self, image: &[u8], rendered_history: &str) -> Result<GenerationResult, BackendError> {
        let digest = fnv_digest(image);
        let key = Script::key(&digest, rendered_history);
        match self.by_key.get(&key) {
            Some(&idx) => mock_generation(
                &self.script.entries[idx].response,
                self.script.embedding_width,
                self.script.embed_seed,
                0.0,
            ),
            None => Err(BackendError::ScriptMiss {
                key,
                nearest: self.nearest_key(&digest, rendered_history),
            }),
        }
    }

    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }
}

/// Records every (history, response) pair that flows through the inner
/// backend; `into_script` yields the captured script.
pub struct Recorder<B: MllmBackend> {
    inner: B,
    entries: Mutex<Vec<ScriptEntry>>,
}

impl<B: MllmBackend> Recorder<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, entries: Mutex::new(Vec::new()) }
    }

    pub fn into_script(self) -> Script {
        let descriptor = self.inner.descriptor();
        let mut script = Script::new(&descriptor.model, descriptor.embedding_width);
        let mut seen = std::collections::HashSet::new();
        for entry in self.entries.into_inner().expect("recorder mutex poisoned") {
            let key = Script::key(&entry.image_digest, &entry.history);
            if seen.insert(key) {
                script.entries.push(entry);
            }
        }
        script
    }
}

impl<B: MllmBackend> MllmBackend for Recorder<B> {
    fn generate(&self, image: &[u8], rendered_history: &str) -> Result<GenerationResult, BackendError> {
        let result = self.inner.generate(image, rendered_history)?;
        self.entries.lock().expect("recorder mutex poisoned").push(ScriptEntry {
            image_digest: fnv_digest(image),
            history: rendered_history.to_string(),
            response: result.text.clone(),
        });
        Ok(result)
    }

    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }
}
