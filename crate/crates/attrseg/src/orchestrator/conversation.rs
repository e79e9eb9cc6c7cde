//! Multi-turn conversation state. Rendering concatenates turns in order —
//! task prompt, then user query, then the answer once it arrives — so the
//! backend always sees the full nested history.

use thiserror::Error;

#[derive(Clone, Debug)]
pub struct Turn {
    pub task_prompt: String,
    pub user_query: String,
    answer: Option<String>,
}

impl Turn {
    pub fn answer(&self) -> Option<&str> {
        self.answer.as_deref()
    }

    fn render(&self) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(3);
        if !self.task_prompt.is_empty() {
            parts.push(&self.task_prompt);
        }
        if !self.user_query.is_empty() {
            parts.push(&self.user_query);
        }
        if let Some(answer) = &self.answer {
            parts.push(answer);
        }
        parts.join("\n")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConversationError {
    #[error("turn {0} already has an answer")]
    AnswerAlreadySet(usize),
    #[error("turn {0} does not exist")]
    NoSuchTurn(usize),
}

/// Append-only turn list bound to one image for its whole lifetime.
#[derive(Clone, Debug)]
pub struct ConversationState {
    image_ref: String,
    turns: Vec<Turn>,
}

impl ConversationState {
    pub fn new(image_ref: impl Into<String>) -> Self {
        Self { image_ref: image_ref.into(), turns: Vec::new() }
    }

    pub fn image_ref(&self) -> &str {
        &self.image_ref
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    /// Appends a turn awaiting its answer; returns the turn index.
    pub fn push_turn(&mut self, task_prompt: impl Into<String>, user_query: impl Into<String>) -> usize {
        self.turns.push(Turn {
            task_prompt: task_prompt.into(),
            user_query: user_query.into(),
            answer: None,
        });
        self.turns.len() - 1
    }

    /// Sets a turn's answer exactly once.
    pub fn set_answer(&mut self, turn: usize, answer: impl Into<String>) -> Result<(), ConversationError> {
        let slot = self.turns.get_mut(turn).ok_or(ConversationError::NoSuchTurn(turn))?;
        if slot.answer.is_some() {
            return Err(ConversationError::AnswerAlreadySet(turn));
        }
        slot.answer = Some(answer.into());
        Ok(())
    }

    /// Full rendered history: turns concatenated in order.
    pub fn render(&self) -> String {
        self.turns.iter().map(Turn::render).collect::<Vec<_>>().join("\n")
    }
}
