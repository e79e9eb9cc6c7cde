//! Chain-of-thought prompt orchestration: turn a user query and an image
//! into a target name, attribute text and token-embedding spans for the
//! segmentation model. Three steps — reason, target, attributes — with the
//! latter two merged into one round by default.

pub mod chain;
pub mod conversation;
pub mod templates;
pub mod trace;

pub use chain::{
    parse_target, run_chain, ChainError, ChainMode, ChainOptions, ChainRun, PartialTrace,
    Step1Source,
};
pub use conversation::{ConversationState, Turn};
pub use templates::{
    build_merged_target_attribute_prompt, build_reason_prompt, build_separate_prompts,
    is_question, placeholders, PromptTemplate, Step, TemplateError, TemplateSet,
};
pub use trace::{CoTTrace, SpanMode, TraceLog};
