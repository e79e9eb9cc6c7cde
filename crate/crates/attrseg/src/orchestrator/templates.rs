//! Prompt templates for the three prompting steps plus the merged
//! step-2/3 variant. Templates load from a plain-text file with
//! `@template <step>` section headers and `[NAME]` placeholders.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

pub const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    Reason,
    Target,
    Attribute,
    MergedTargetAttribute,
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::Reason => "reason",
            Step::Target => "target",
            Step::Attribute => "attribute",
            Step::MergedTargetAttribute => "merged_target_attribute",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "reason" => Some(Step::Reason),
            "target" => Some(Step::Target),
            "attribute" => Some(Step::Attribute),
            "merged_target_attribute" => Some(Step::MergedTargetAttribute),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PromptTemplate {
    pub template_id: String,
    pub step: Step,
    pub body: String,
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unknown template step {0:?}")]
    UnknownStep(String),
    #[error("missing template for step {0:?}")]
    MissingStep(&'static str),
    #[error("template {template_id}: placeholder [{placeholder}] left unfilled")]
    Unfilled { template_id: String, placeholder: String },
    #[error("empty {0} is not a valid input")]
    InvalidInput(&'static str),
}

/// Placeholders appearing in a template body: bracketed upper-case names
/// like `[USER QUERY]`.
pub fn placeholders(body: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            if let Some(rel) = body[i + 1..].find(']') {
                let inner = &body[i + 1..i + 1 + rel];
                if !inner.is_empty()
                    && inner.chars().all(|c| c.is_ascii_uppercase() || c == ' ')
                {
                    out.insert(inner.to_string());
                    i += rel + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

impl PromptTemplate {
    /// Substitutes the given values, erroring on any placeholder that is
    /// left unfilled.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut text = self.body.clone();
        for (name, value) in values {
            text = text.replace(&format!("[{name}]"), value);
        }
        let required = placeholders(&self.body);
        let provided: BTreeSet<String> = values.iter().map(|(n, _)| n.to_string()).collect();
        if let Some(missing) = required.difference(&provided).next() {
            return Err(TemplateError::Unfilled {
                template_id: self.template_id.clone(),
                placeholder: missing.clone(),
            });
        }
        Ok(text)
    }
}

/// The four templates a chain needs, immutable after load.
#[derive(Clone, Debug)]
pub struct TemplateSet {
    pub reason: PromptTemplate,
    pub target: PromptTemplate,
    pub attribute: PromptTemplate,
    pub merged: PromptTemplate,
}

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut sections: Vec<(String, Vec<String>)> = Vec::new();
        for line in text.lines() {
            if let Some(name) = line.strip_prefix("@template ") {
                sections.push((name.trim().to_string(), Vec::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push(line.to_string());
            }
            // Lines before the first header (comments) are ignored.
        }
        let mut found: Vec<PromptTemplate> = Vec::new();
        for (name, body_lines) in sections {
            let step =
                Step::from_name(&name).ok_or_else(|| TemplateError::UnknownStep(name.clone()))?;
            let body = body_lines.join("\n").trim().to_string();
            found.push(PromptTemplate { template_id: name, step, body });
        }
        let take = |step: Step| {
            found
                .iter()
                .find(|t| t.step == step)
                .cloned()
                .ok_or(TemplateError::MissingStep(step.name()))
        };
        Ok(Self {
            reason: take(Step::Reason)?,
            target: take(Step::Target)?,
            attribute: take(Step::Attribute)?,
            merged: take(Step::MergedTargetAttribute)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| TemplateError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("shipped templates parse")
    }
}

/// A query counts as a question when it ends in `?` or starts with an
/// interrogative word.
pub fn is_question(query: &str) -> bool {
    let trimmed = query.trim();
    if trimmed.ends_with('?') {
        return true;
    }
    let first = trimmed.split_whitespace().next().unwrap_or_default().to_lowercase();
    matches!(first.as_str(), "what" | "which" | "where" | "who" | "whom" | "whose" | "when" | "why" | "how")
}

/// Step-1 prompt: questions pass through verbatim, statements are wrapped
/// in the reason template. No rationale instruction is appended.
pub fn build_reason_prompt(
    templates: &TemplateSet,
    query: &str,
    query_is_question: bool,
) -> Result<String, TemplateError> {
    if query.trim().is_empty() {
        return Err(TemplateError::InvalidInput("query"));
    }
    if query_is_question {
        return Ok(query.to_string());
    }
    templates.reason.render(&[("USER QUERY", query)])
}

/// Single prompt running the target and attribute steps in one round.
pub fn build_merged_target_attribute_prompt(
    templates: &TemplateSet,
    question: &str,
    answer: &str,
) -> Result<String, TemplateError> {
    if question.trim().is_empty() {
        return Err(TemplateError::InvalidInput("question"));
    }
    if answer.trim().is_empty() {
        return Err(TemplateError::InvalidInput("answer"));
    }
    templates.merged.render(&[("QUESTION", question), ("ANSWER", answer)])
}

/// Independent step-2 and step-3 prompts.
pub fn build_separate_prompts(
    templates: &TemplateSet,
    question: &str,
    answer: &str,
    target: &str,
) -> Result<(String, String), TemplateError> {
    if question.trim().is_empty() {
        return Err(TemplateError::InvalidInput("question"));
    }
    if answer.trim().is_empty() {
        return Err(TemplateError::InvalidInput("answer"));
    }
    if target.trim().is_empty() {
        return Err(TemplateError::InvalidInput("target"));
    }
    let target_prompt = templates.target.render(&[("QUESTION", question), ("ANSWER", answer)])?;
    let attribute_prompt = templates.attribute.render(&[("TARGET", target)])?;
    Ok((target_prompt, attribute_prompt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_parse() {
        let set = TemplateSet::builtin();
        assert_eq!(placeholders(&set.reason.body), BTreeSet::from(["USER QUERY".to_string()]));
        assert_eq!(
            placeholders(&set.merged.body),
            BTreeSet::from(["QUESTION".to_string(), "ANSWER".to_string()])
        );
    }

    #[test]
    fn reason_prompt_instantiation() {
        let set = TemplateSet::builtin();
        let p = build_reason_prompt(&set, "covering the burning wood", false).unwrap();
        assert_eq!(p, "What is the object or part that is covering the burning wood in this image?");
        let q = build_reason_prompt(&set, "What keeps the campers warm?", true).unwrap();
        assert_eq!(q, "What keeps the campers warm?");
        assert!(matches!(
            build_reason_prompt(&set, "", false),
            Err(TemplateError::InvalidInput("query"))
        ));
    }

    #[test]
    fn merged_prompt_contains_both_guidelines_once() {
        let set = TemplateSet::builtin();
        let q = "What is covering the wood in this image?";
        let a = "It is fire in the fire pit. The fire is hot and bright.";
        let p = build_merged_target_attribute_prompt(&set, q, a).unwrap();
        assert!(p.contains("(1)"));
        assert!(p.contains("(2)"));
        assert!(p.contains("analyze the conversation and identify the distinct physical objects"));
        assert!(p.contains("Briefly describe the target entity or part's"));
        assert_eq!(p.matches(q).count(), 1);
        assert_eq!(p.matches(a).count(), 1);
        assert!(matches!(
            build_merged_target_attribute_prompt(&set, q, ""),
            Err(TemplateError::InvalidInput("answer"))
        ));
    }

    #[test]
    fn separate_prompts_and_placeholder_roundtrip() {
        let set = TemplateSet::builtin();
        let (tp, ap) = build_separate_prompts(&set, "What is hot?", "It is fire.", "the fire").unwrap();
        assert!(ap.contains("The target is: the fire"));
        assert!(placeholders(&tp).is_empty());
        assert!(placeholders(&ap).is_empty());
    }

    #[test]
    fn unfilled_placeholder_is_render_error() {
        let t = PromptTemplate {
            template_id: "t".into(),
            step: Step::Attribute,
            body: "Describe [TARGET] against [QUESTION]".into(),
        };
        assert!(matches!(
            t.render(&[("TARGET", "the fire")]),
            Err(TemplateError::Unfilled { .. })
        ));
    }

    #[test]
    fn question_detection() {
        assert!(is_question("What keeps the campers warm?"));
        assert!(is_question("what keeps the campers warm"));
        assert!(is_question("How does this work"));
        assert!(!is_question("the thing covering the wood"));
        assert!(!is_question("sitting in the upper left area"));
    }

    #[test]
    fn file_parse_errors() {
        assert!(matches!(
            TemplateSet::parse("@template bogus\nhello"),
            Err(TemplateError::UnknownStep(_))
        ));
        assert!(matches!(
            TemplateSet::parse("@template reason\nWhat is [USER QUERY]?"),
            Err(TemplateError::MissingStep(_))
        ));
    }
}
