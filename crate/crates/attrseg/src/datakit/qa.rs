//! Q-A templates that simulate the first prompting step for datasets that
//! only carry a brief target phrase, so every sample flows through the same
//! downstream prompting code.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::manifest::{Category, SampleRecord};

pub const PHRASE_PLACEHOLDER: &str = "[PHRASE]";

#[derive(Clone, Debug)]
pub struct QaTemplate {
    pub template_id: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error("template {template_id}: {form} form must contain {PHRASE_PLACEHOLDER} exactly once")]
    BadPlaceholder { template_id: String, form: &'static str },
    #[error("template registry is empty")]
    EmptyRegistry,
    #[error("sample {sample_id} is a reasoning sample; step-1 simulation does not apply")]
    ReasoningSample { sample_id: String },
    #[error("sample {sample_id} carries no phrase")]
    MissingPhrase { sample_id: String },
}

impl QaTemplate {
    pub fn new(template_id: &str, question: &str, answer: &str) -> Result<Self, QaError> {
        let check = |form: &str, name: &'static str| {
            if form.matches(PHRASE_PLACEHOLDER).count() == 1 {
                Ok(())
            } else {
                Err(QaError::BadPlaceholder { template_id: template_id.to_string(), form: name })
            }
        };
        check(question, "question")?;
        check(answer, "answer")?;
        Ok(Self {
            template_id: template_id.to_string(),
            question: question.to_string(),
            answer: answer.to_string(),
        })
    }

    pub fn instantiate(&self, phrase: &str) -> (String, String) {
        (
            self.question.replace(PHRASE_PLACEHOLDER, phrase),
            self.answer.replace(PHRASE_PLACEHOLDER, phrase),
        )
    }
}

/// The shipped paraphrase set.
pub fn default_registry() -> Vec<QaTemplate> {
    let raw: [(&str, &str, &str); 8] = [
        ("qa-region", "What is [PHRASE]'s region in this image?", "It is [PHRASE]."),
        ("qa-where", "Where is [PHRASE] in this image?", "The image shows [PHRASE]."),
        ("qa-find", "Can you find [PHRASE] in this image?", "Yes, there is [PHRASE] in the image."),
        ("qa-part", "What part of this image shows [PHRASE]?", "The region containing [PHRASE]."),
        ("qa-area", "Which area of the image contains [PHRASE]?", "The area with [PHRASE]."),
        ("qa-object", "What is the object described as [PHRASE]?", "The object is [PHRASE]."),
        ("qa-locate", "Please locate [PHRASE] in this image.", "I can see [PHRASE] in the image."),
        ("qa-identify", "Identify [PHRASE] in this picture.", "The picture contains [PHRASE]."),
    ];
    raw.iter()
        .map(|(id, q, a)| QaTemplate::new(id, q, a).expect("shipped template is valid"))
        .collect()
}

/// Samples a template uniformly and instantiates both forms with the
/// record's phrase, yielding the simulated step-1 (question, answer) pair.
pub fn simulate_step1(
    record: &SampleRecord,
    registry: &[QaTemplate],
    rng: &mut ChaCha8Rng,
) -> Result<(String, String), QaError> {
    if registry.is_empty() {
        return Err(QaError::EmptyRegistry);
    }
    if record.category == Category::Reasoning {
        return Err(QaError::ReasoningSample { sample_id: record.sample_id.clone() });
    }
    let phrase = record
        .phrase
        .as_deref()
        .filter(|p| !p.trim().is_empty())
        .ok_or_else(|| QaError::MissingPhrase { sample_id: record.sample_id.clone() })?;
    let template = &registry[rng.random_range(0..registry.len())];
    Ok(template.instantiate(phrase))
}

/// Derives the per-sample rng used for step-1 simulation. Both the script
/// generator and the trace cache derive the same stream from (seed, id), so
/// scripted histories line up.
pub fn qa_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    crate::rng::derive_rng_indexed(seed, "qa-sim", crate::hash::fnv64(sample_id.as_bytes()))
}
