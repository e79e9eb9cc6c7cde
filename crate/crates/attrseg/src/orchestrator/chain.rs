//! Chain execution: step 1 (reason), then steps 2-3 (target + attributes)
//! either merged into one round or as separate rounds, all inside one
//! conversation bound to the image.

use std::ops::Range;

use thiserror::Error;

use super::conversation::ConversationState;
use super::templates::{
    build_merged_target_attribute_prompt, build_reason_prompt, build_separate_prompts,
    is_question, TemplateError, TemplateSet,
};
use super::trace::{CoTTrace, SpanMode};
use crate::backend::{slice_embeddings, BackendError, GenerationResult, MllmBackend};
use crate::hash::fnv_digest;
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ChainMode {
    /// Steps 2 and 3 run in the same round (the default; saves a round).
    #[default]
    Merged,
    /// Separate target and attribute rounds.
    Separate,
}

/// Where step 1 comes from: a live backend call on the user query, or a
/// preset (question, answer) pair simulated from a Q-A template.
#[derive(Clone, Debug)]
pub enum Step1Source {
    Live { query: String },
    Preset { question: String, answer: String },
}

#[derive(Clone, Debug)]
pub struct ChainOptions {
    pub templates: TemplateSet,
    pub mode: ChainMode,
    pub attribute_span_mode: SpanMode,
    /// Retries per backend call on transport errors.
    pub retries: u32,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            templates: TemplateSet::builtin(),
            mode: ChainMode::Merged,
            attribute_span_mode: SpanMode::Whole,
            retries: 1,
        }
    }
}

/// What is known about a chain when it fails part-way.
#[derive(Clone, Debug, Default)]
pub struct PartialTrace {
    pub user_query: String,
    pub reason_answer: Option<String>,
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("backend failure at step {step}: {source}")]
    Backend { step: u8, source: BackendError, partial: Box<PartialTrace> },
    #[error("no target could be parsed at step {step} from {raw:?}")]
    ParseTarget { step: u8, raw: String, partial: Box<PartialTrace> },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Conversation(#[from] super::conversation::ConversationError),
}

/// A completed chain: the trace plus the generation results the embedding
/// slices come from. In merged mode the target and attribute results are
/// the same generation.
#[derive(Clone, Debug)]
pub struct ChainRun {
    pub trace: CoTTrace,
    /// Step-1 result; absent when step 1 was preset.
    pub reason_result: Option<GenerationResult>,
    pub target_result: GenerationResult,
    pub attribute_result: GenerationResult,
}

impl ChainRun {
    /// Raw prompt embeddings for the segmentation model: target rows then
    /// attribute rows.
    pub fn prompt_embeddings(&self) -> Result<Mat, BackendError> {
        let target =
            slice_embeddings(&self.target_result, &[span_range(self.trace.target_token_span)])?;
        let spans: Vec<Range<usize>> =
            self.trace.attribute_token_spans.iter().map(|&s| span_range(s)).collect();
        let attributes = slice_embeddings(&self.attribute_result, &spans)?;
        Ok(Mat::vcat(&[&target, &attributes], target.cols()))
    }

    /// Raw embeddings of the whole step-1 answer, when step 1 ran live.
    pub fn reason_embeddings(&self) -> Result<Option<Mat>, BackendError> {
        match &self.reason_result {
            Some(result) => {
                let all = 0..result.token_count();
                Ok(Some(slice_embeddings(result, std::slice::from_ref(&all))?))
            }
            None => Ok(None),
        }
    }
}

fn span_range(span: (usize, usize)) -> Range<usize> {
    span.0..span.1
}

/// Leading frames stripped from a step-2 response before the target is
/// taken; trailing frames trimmed after.
const LEADING_FRAMES: [&str; 8] = [
    "the user wants",
    "the target is",
    "the answer is",
    "the user is asking for",
    "it is",
    "it's",
    "they want",
    "this is",
];
const TRAILING_FRAMES: [&str; 4] =
    [" from the image", " in the image", " in this image", " of the image"];

/// Extracts the target noun phrase from a step-2 response: strip a leading
/// frame if present, otherwise keep the first sentence; always lowercase
/// and trimmed. Returns the target and any additional targets discarded
/// from an enumeration.
pub fn parse_target(step2_response: &str) -> Result<(String, Vec<String>), String> {
    let trimmed = step2_response.trim();
    if trimmed.is_empty() {
        return Err("response is empty or whitespace".to_string());
    }
    let first_sentence = split_sentences(trimmed)
        .first()
        .map(|r| trimmed[r.clone()].to_string())
        .unwrap_or_else(|| trimmed.to_string());
    let mut text = first_sentence.to_lowercase();
    loop {
        let mut stripped = false;
        let t = text.trim_start().to_string();
        for frame in LEADING_FRAMES {
            if let Some(rest) = t.strip_prefix(frame) {
                // Only treat it as a frame when a word boundary follows.
                if rest.starts_with(' ') || rest.starts_with(':') {
                    text = rest.trim_start_matches([' ', ':']).to_string();
                    stripped = true;
                    break;
                }
            }
        }
        if !stripped {
            text = t;
            break;
        }
    }
    let punct = |c: char| c.is_whitespace() || ".,;:!?\"'".contains(c);
    text = text.trim_matches(punct).to_string();
    for frame in TRAILING_FRAMES {
        if let Some(rest) = text.strip_suffix(frame) {
            text = rest.to_string();
            break;
        }
    }
    let cleaned = text.trim_matches(punct);
    if cleaned.is_empty() {
        return Err("no extractable content after frame stripping".to_string());
    }
    // Keep the first of an enumeration; split only where a fresh determiner
    // starts so compound phrases ("black and white") stay whole.
    const SEPARATORS: [(&str, &str); 4] =
        [(" and the ", "the "), (", the ", "the "), (" and a ", "a "), (", a ", "a ")];
    let mut parts: Vec<String> = Vec::new();
    let mut rest = cleaned.to_string();
    loop {
        let next = SEPARATORS
            .iter()
            .filter_map(|(sep, article)| rest.find(sep).map(|i| (i, sep.len(), *article)))
            .min_by_key(|&(i, _, _)| i);
        match next {
            Some((i, sep_len, article)) => {
                parts.push(rest[..i].trim().to_string());
                rest = format!("{article}{}", &rest[i + sep_len..]);
            }
            None => {
                parts.push(rest.trim().to_string());
                break;
            }
        }
    }
    let target = parts.remove(0);
    Ok((target, parts))
}

/// Sentence byte ranges: split after `.`, `!` or `?` (or newline).
pub fn split_sentences(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0usize;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?' | '\n') {
            let end = i + c.len_utf8();
            if text[start..end].trim().is_empty() {
                start = end;
                continue;
            }
            out.push(start..end);
            start = end;
        }
    }
    if start < text.len() && !text[start..].trim().is_empty() {
        out.push(start..text.len());
    }
    out
}

/// Token index span covering a byte range of the response text.
fn token_span_for_bytes(result: &GenerationResult, range: &Range<usize>) -> Option<(usize, usize)> {
    let mut first = None;
    let mut last = None;
    for (i, t) in result.tokens.iter().enumerate() {
        if t.end > range.start && t.start < range.end {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    match (first, last) {
        (Some(f), Some(l)) => Some((f, l + 1)),
        _ => None,
    }
}

/// Longest-exact-match location of `needle` (already lowercased) in the
/// response text, searched case-insensitively. ASCII case folding keeps
/// byte offsets aligned with the original text.
fn find_span(result: &GenerationResult, needle: &str, from: usize) -> Option<(usize, usize)> {
    let haystack = result.text.to_ascii_lowercase();
    haystack[from.min(haystack.len())..]
        .find(needle)
        .map(|i| from + i)
        .and_then(|i| token_span_for_bytes(result, &(i..i + needle.len())))
}

struct StepCall<'a> {
    backend: &'a dyn MllmBackend,
    image: &'a [u8],
    retries: u32,
}

impl StepCall<'_> {
    fn generate(
        &self,
        step: u8,
        history: &str,
        partial: &PartialTrace,
    ) -> Result<GenerationResult, ChainError> {
        let mut attempt = 0;
        loop {
            match self.backend.generate(self.image, history) {
                Ok(result) => return Ok(result),
                Err(source) if source.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                }
                Err(source) => {
                    return Err(ChainError::Backend {
                        step,
                        source,
                        partial: Box::new(partial.clone()),
                    })
                }
            }
        }
    }
}

/// Runs the full chain and resolves token spans for the target name and
/// attribute text. With a deterministic backend the result is a pure
/// function of (image bytes, step-1 source, mode, script).
pub fn run_chain(
    image: &[u8],
    step1: Step1Source,
    backend: &dyn MllmBackend,
    opts: &ChainOptions,
) -> Result<ChainRun, ChainError> {
    let mut state = ConversationState::new(fnv_digest(image));
    let call = StepCall { backend, image, retries: opts.retries };
    let mut latency_ms = 0.0;

    // Step 1: reason about the target, or accept the preset pair.
    let (user_query, question, reason_answer, reason_result, simulated) = match &step1 {
        Step1Source::Live { query } => {
            let question = build_reason_prompt(&opts.templates, query, is_question(query))?;
            let turn = state.push_turn("", question.clone());
            let partial = PartialTrace { user_query: query.clone(), reason_answer: None };
            let result = call.generate(1, &state.render(), &partial)?;
            latency_ms += result.latency_ms;
            state.set_answer(turn, result.text.clone())?;
            (query.clone(), question, result.text.clone(), Some(result), false)
        }
        Step1Source::Preset { question, answer } => {
            let turn = state.push_turn("", question.clone());
            state.set_answer(turn, answer.clone())?;
            (question.clone(), question.clone(), answer.clone(), None, true)
        }
    };
    let partial =
        PartialTrace { user_query: user_query.clone(), reason_answer: Some(reason_answer.clone()) };

    match opts.mode {
        ChainMode::Merged => {
            let prompt =
                build_merged_target_attribute_prompt(&opts.templates, &question, &reason_answer)?;
            let turn = state.push_turn(prompt, "");
            let result = call.generate(2, &state.render(), &partial)?;
            latency_ms += result.latency_ms;
            state.set_answer(turn, result.text.clone())?;

            let (target, discarded) = parse_target(&result.text).map_err(|_| {
                ChainError::ParseTarget {
                    step: 2,
                    raw: result.text.clone(),
                    partial: Box::new(partial.clone()),
                }
            })?;

            // The response's first sentence names the target; the remainder
            // carries the attributes.
            let sentences = split_sentences(&result.text);
            let first_end = sentences.first().map_or(result.text.len(), |r| r.end);
            let attr_region = first_end..result.text.len();
            let attributes_text = result.text[attr_region.clone()].trim().to_string();
            let (attributes, attr_region) = if attributes_text.is_empty() {
                // Fall back to the whole response.
                (result.text.trim().to_string(), 0..result.text.len())
            } else {
                (attributes_text, attr_region)
            };

            let target_span = find_span(&result, &target, 0)
                .ok_or_else(|| ChainError::ParseTarget {
                    step: 2,
                    raw: result.text.clone(),
                    partial: Box::new(partial.clone()),
                })?;
            let attribute_spans = attribute_spans_for_region(
                &result,
                &attr_region,
                opts.attribute_span_mode,
                target_span,
            );

            let trace = CoTTrace {
                user_query,
                reason_answer,
                target,
                attributes,
                target_token_span: target_span,
                attribute_token_spans: attribute_spans,
                merged_steps_2_3: true,
                step2_raw: result.text.clone(),
                discarded_targets: discarded,
                attribute_span_mode: opts.attribute_span_mode,
                simulated_step1: simulated,
                latency_ms,
            };
            Ok(ChainRun {
                trace,
                reason_result,
                target_result: result.clone(),
                attribute_result: result,
            })
        }
        ChainMode::Separate => {
            let (target_prompt, _) = build_separate_prompts(
                &opts.templates,
                &question,
                &reason_answer,
                "placeholder",
            )?;
            let turn = state.push_turn(target_prompt, "");
            let target_result = call.generate(2, &state.render(), &partial)?;
            latency_ms += target_result.latency_ms;
            state.set_answer(turn, target_result.text.clone())?;

            let (target, discarded) = parse_target(&target_result.text).map_err(|_| {
                ChainError::ParseTarget {
                    step: 2,
                    raw: target_result.text.clone(),
                    partial: Box::new(partial.clone()),
                }
            })?;
            let target_span = find_span(&target_result, &target, 0)
                .ok_or_else(|| ChainError::ParseTarget {
                    step: 2,
                    raw: target_result.text.clone(),
                    partial: Box::new(partial.clone()),
                })?;

            let (_, attribute_prompt) =
                build_separate_prompts(&opts.templates, &question, &reason_answer, &target)?;
            let turn = state.push_turn(attribute_prompt, "");
            let attribute_result = call.generate(3, &state.render(), &partial)?;
            latency_ms += attribute_result.latency_ms;
            state.set_answer(turn, attribute_result.text.clone())?;

            let attr_region = 0..attribute_result.text.len();
            let attribute_spans = attribute_spans_for_region(
                &attribute_result,
                &attr_region,
                opts.attribute_span_mode,
                // Separate generations cannot overlap the target span.
                (usize::MAX, usize::MAX),
            );
            let trace = CoTTrace {
                user_query,
                reason_answer,
                target,
                attributes: attribute_result.text.trim().to_string(),
                target_token_span: target_span,
                attribute_token_spans: attribute_spans,
                merged_steps_2_3: false,
                step2_raw: target_result.text.clone(),
                discarded_targets: discarded,
                attribute_span_mode: opts.attribute_span_mode,
                simulated_step1: simulated,
                latency_ms,
            };
            Ok(ChainRun { trace, reason_result, target_result, attribute_result })
        }
    }
}

/// Token spans for the attribute region, either one whole-region span or
/// one per sentence, clipped so they never overlap the target span.
fn attribute_spans_for_region(
    result: &GenerationResult,
    region: &Range<usize>,
    mode: SpanMode,
    target_span: (usize, usize),
) -> Vec<(usize, usize)> {
    let byte_ranges: Vec<Range<usize>> = match mode {
        SpanMode::Whole => vec![region.clone()],
        SpanMode::Sentence => split_sentences(&result.text[region.clone()])
            .into_iter()
            .map(|r| region.start + r.start..region.start + r.end)
            .collect(),
    };
    let mut spans = Vec::new();
    for range in byte_ranges {
        if let Some(span) = token_span_for_bytes(result, &range) {
            // Clip around the target span if the regions intersect.
            let (ts, te) = target_span;
            if span.1 <= ts || span.0 >= te {
                spans.push(span);
            } else {
                if span.0 < ts {
                    spans.push((span.0, ts));
                }
                if span.1 > te {
                    spans.push((te, span.1));
                }
            }
        }
    }
    // Fall back to the whole response when nothing matched.
    if spans.is_empty() && result.token_count() > 0 {
        spans.push((0, result.token_count()));
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::{Script, ScriptEntry, ScriptedBackend};

    #[test]
    fn parse_target_examples() {
        assert_eq!(
            parse_target("The user wants the fire from the image.").unwrap(),
            ("the fire".to_string(), vec![])
        );
        assert_eq!(parse_target("the fire").unwrap(), ("the fire".to_string(), vec![]));
        assert!(parse_target("   ").is_err());
        assert_eq!(parse_target("It is fire in the fire pit. More.").unwrap().0, "fire in the fire pit");
        assert_eq!(
            parse_target("The user wants the fire and the kettle from the image.").unwrap(),
            ("the fire".to_string(), vec!["the kettle".to_string()])
        );
        // Compound adjectives are not enumeration boundaries.
        assert_eq!(parse_target("the black and white cat").unwrap().0, "the black and white cat");
    }

    #[test]
    fn sentence_split() {
        let s = split_sentences("One. Two! Three? Four");
        assert_eq!(s.len(), 4);
        assert_eq!(&"One. Two! Three? Four"[s[3].clone()], " Four");
    }

    fn fire_script(image: &[u8]) -> (Script, String) {
        use crate::orchestrator::templates::TemplateSet;
        let templates = TemplateSet::builtin();
        let question = "What is the object or part that is hot in this image?";
        let answer = "It is fire in the fire pit. The fire is hot and bright.";
        let merged_prompt =
            build_merged_target_attribute_prompt(&templates, question, answer).unwrap();
        let merged_response = "The user wants the fire from the image. The fire can be \
                               discriminated from the image by its bright orange color and the \
                               fact that it is emitting heat and light. The fire is surrounded by stones.";
        let digest = fnv_digest(image);
        let mut script = Script::new("mock", 64);
        script.entries.push(ScriptEntry {
            image_digest: digest.clone(),
            history: question.to_string(),
            response: answer.to_string(),
        });
        script.entries.push(ScriptEntry {
            image_digest: digest,
            history: format!("{question}\n{answer}\n{merged_prompt}"),
            response: merged_response.to_string(),
        });
        (script, question.to_string())
    }

    #[test]
    fn merged_chain_on_scripted_backend() {
        let image = b"fire pit image";
        let (script, _q) = fire_script(image);
        let backend = ScriptedBackend::new(script, None);
        let run = run_chain(
            image,
            Step1Source::Live { query: "What is the object or part that is hot in this image?".into() },
            &backend,
            &ChainOptions::default(),
        )
        .unwrap();
        assert_eq!(run.trace.target, "the fire");
        assert!(run.trace.attributes.contains("bright orange color"));
        assert!(run.trace.merged_steps_2_3);
        // Span decodes to text containing the target.
        let decoded = run.target_result.span_text(&span_range(run.trace.target_token_span));
        assert_eq!(decoded.to_lowercase(), "the fire");
        // Attribute spans do not overlap the target span and decode to
        // substrings of the step-3 response.
        let (ts, te) = run.trace.target_token_span;
        for &(s, e) in &run.trace.attribute_token_spans {
            assert!(e <= ts || s >= te, "span ({s},{e}) overlaps target ({ts},{te})");
            let decoded = run.attribute_result.span_text(&(s..e));
            assert!(
                run.attribute_result.text.contains(&decoded),
                "span text {decoded:?} not in response"
            );
            assert!(!decoded.trim().is_empty());
        }
        let prompt = run.prompt_embeddings().unwrap();
        assert_eq!(prompt.cols(), 64);
        assert!(prompt.rows() > 2);
    }

    #[test]
    fn chain_is_deterministic() {
        let image = b"fire pit image";
        let (script, q) = fire_script(image);
        let backend = ScriptedBackend::new(script, None);
        let step1 = Step1Source::Live { query: q };
        let a = run_chain(image, step1.clone(), &backend, &ChainOptions::default()).unwrap();
        let b = run_chain(image, step1, &backend, &ChainOptions::default()).unwrap();
        assert_eq!(a.trace.to_json_line(), b.trace.to_json_line());
        assert_eq!(a.prompt_embeddings().unwrap(), b.prompt_embeddings().unwrap());
    }

    #[test]
    fn empty_step2_response_fails_with_partial_trace() {
        let image = b"img";
        let (mut script, q) = fire_script(image);
        script.entries[1].response = "   ".to_string();
        let backend = ScriptedBackend::new(script, None);
        let err = run_chain(
            image,
            Step1Source::Live { query: q },
            &backend,
            &ChainOptions::default(),
        )
        .unwrap_err();
        match err {
            ChainError::ParseTarget { step, partial, .. } => {
                assert_eq!(step, 2);
                assert!(partial.reason_answer.unwrap().contains("fire"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn backend_miss_reports_step_index() {
        let image = b"img";
        let backend = ScriptedBackend::new(Script::new("mock", 64), None);
        let err = run_chain(
            image,
            Step1Source::Live { query: "What is hot in this image?".into() },
            &backend,
            &ChainOptions::default(),
        )
        .unwrap_err();
        match err {
            ChainError::Backend { step, source, .. } => {
                assert_eq!(step, 1);
                assert!(matches!(source, BackendError::ScriptMiss { .. }));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn preset_step1_skips_backend_for_step1() {
        let image = b"img";
        let question = "What is the red kite's region in this image?";
        let answer = "It is the red kite.";
        let templates = TemplateSet::builtin();
        let merged_prompt =
            build_merged_target_attribute_prompt(&templates, question, answer).unwrap();
        let mut script = Script::new("mock", 32);
        script.embedding_width = 32;
        script.entries.push(ScriptEntry {
            image_digest: fnv_digest(image),
            history: format!("{question}\n{answer}\n{merged_prompt}"),
            response: "The user wants the kite from the image. The kite is red. It is in the sky."
                .to_string(),
        });
        let backend = ScriptedBackend::new(script, None);
        let run = run_chain(
            image,
            Step1Source::Preset { question: question.into(), answer: answer.into() },
            &backend,
            &ChainOptions::default(),
        )
        .unwrap();
        assert!(run.trace.simulated_step1);
        assert!(run.reason_result.is_none());
        assert_eq!(run.trace.target, "the kite");
    }

    use crate::orchestrator::templates::TemplateSet;
}
