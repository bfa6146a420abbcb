//! Shared domain types: questions, contexts, spans, feedback.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::datastore::tokenize;
use crate::error::{Error, Result};

/// Maximum context length in tokens for deployed policies.
pub const DEFAULT_MAX_CONTEXT_LEN: usize = 490;

/// A user question. `topic` and `aspect` are the prompt strings the user picked;
/// both are fed to the model on the question side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub tokens: Vec<String>,
    pub raw_text: String,
    #[serde(default)]
    pub topic: String,
    #[serde(default)]
    pub aspect: String,
}

impl Question {
    pub fn new(raw_text: &str) -> Result<Self> {
        Self::with_prompt(raw_text, "", "")
    }

    pub fn with_prompt(raw_text: &str, topic: &str, aspect: &str) -> Result<Self> {
        let tokens = tokenize(raw_text).tokens;
        if tokens.is_empty() {
            return Err(Error::Input("question has no tokens".into()));
        }
        Ok(Question {
            tokens,
            raw_text: raw_text.to_string(),
            topic: topic.to_string(),
            aspect: aspect.to_string(),
        })
    }

    /// Tokens seen by the policy: topic, then aspect, then the question.
    pub fn model_tokens(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::with_capacity(self.tokens.len() + 4);
        for (s, e) in tokenize(&self.topic).offsets {
            out.push(char_slice(&self.topic, s, e));
        }
        for (s, e) in tokenize(&self.aspect).offsets {
            out.push(char_slice(&self.aspect, s, e));
        }
        out.extend(self.tokens.iter().map(String::as_str));
        out
    }
}

/// Evidence paragraph with its token offsets into `raw_text` (character units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub tokens: Vec<String>,
    pub raw_text: String,
    pub offsets: Vec<(usize, usize)>,
}

impl Context {
    pub fn new(raw_text: &str) -> Result<Self> {
        let t = tokenize(raw_text);
        if t.tokens.is_empty() {
            return Err(Error::Input("context has no tokens".into()));
        }
        Ok(Context {
            tokens: t.tokens,
            raw_text: raw_text.to_string(),
            offsets: t.offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Character range `[start, end)` in `raw_text` covered by a span.
    pub fn char_range(&self, span: Span) -> Result<(usize, usize)> {
        span.check(self.len())?;
        Ok((self.offsets[span.start - 1].0, self.offsets[span.end - 1].1))
    }

    /// Raw text covered by a span.
    pub fn span_text(&self, span: Span) -> Result<String> {
        let (s, e) = self.char_range(span)?;
        Ok(char_slice(&self.raw_text, s, e).to_string())
    }

    /// Smallest token window covering the character range `[start, end)`.
    pub fn span_for_chars(&self, start: usize, end: usize) -> Option<Span> {
        if end <= start {
            return None;
        }
        let first = self.offsets.iter().position(|&(_, te)| te > start)?;
        let last = self.offsets.iter().rposition(|&(ts, _)| ts < end)?;
        if last < first {
            return None;
        }
        Some(Span::new(first + 1, last + 1))
    }
}

pub(crate) fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut idx = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b_start = idx.by_ref().nth(start).unwrap_or(text.len());
    let b_end = if end > start {
        idx.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b_start
    };
    &text[b_start..b_end]
}

/// Inclusive token span, 1-based: `1 <= start <= end <= n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.start < 1 || self.start > self.end || self.end > n {
            return Err(Error::Input(format!(
                "span ({}, {}) out of range for context of {} tokens",
                self.start, self.end, n
            )));
        }
        Ok(())
    }
}

/// First action of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Answerability {
    Ans,
    Unans,
}

/// Three-option user feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Feedback {
    Correct,
    PartiallyCorrect,
    Wrong,
}

impl Feedback {
    pub const ALL: [Feedback; 3] = [Feedback::Correct, Feedback::PartiallyCorrect, Feedback::Wrong];

    pub fn as_str(&self) -> &'static str {
        match self {
            Feedback::Correct => "CORRECT",
            Feedback::PartiallyCorrect => "PARTIALLY_CORRECT",
            Feedback::Wrong => "WRONG",
        }
    }
}

impl fmt::Display for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feedback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CORRECT" => Ok(Feedback::Correct),
            "PARTIALLY_CORRECT" => Ok(Feedback::PartiallyCorrect),
            "WRONG" => Ok(Feedback::Wrong),
            other => Err(Error::Input(format!("unknown feedback value {other:?}"))),
        }
    }
}

/// One reference annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Unanswerable,
    Answer {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        span: Option<Span>,
    },
}

impl Reference {
    pub fn text(text: impl Into<String>) -> Self {
        Reference::Answer { text: text.into(), span: None }
    }

    pub fn is_unanswerable(&self) -> bool {
        matches!(self, Reference::Unanswerable)
    }
}

/// Question, context and one to three reference answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    #[serde(default)]
    pub id: String,
    pub question: Question,
    pub context: Context,
    pub references: Vec<Reference>,
}

impl AnnotatedExample {
    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::Input(format!("example {} has no references", self.id)));
        }
        for r in &self.references {
            if let Reference::Answer { span: Some(s), .. } = r {
                s.check(self.context.len())?;
            }
        }
        Ok(())
    }

    /// Gold target for supervised training: the first reference.
    pub fn first_gold(&self) -> Option<Span> {
        match self.references.first() {
            Some(Reference::Answer { span, .. }) => *span,
            _ => None,
        }
    }
}
