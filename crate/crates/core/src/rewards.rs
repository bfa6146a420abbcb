//! Feedback-to-reward mapping.

use serde::{Deserialize, Serialize};

use crate::types::{Answerability, Feedback};

/// Per-feedback reward values, indexed CORRECT / PARTIALLY_CORRECT / WRONG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRewards {
    pub correct: f64,
    pub partially_correct: f64,
    pub wrong: f64,
}

impl FeedbackRewards {
    pub fn get(&self, f: Feedback) -> f64 {
        match f {
            Feedback::Correct => self.correct,
            Feedback::PartiallyCorrect => self.partially_correct,
            Feedback::Wrong => self.wrong,
        }
    }
}

/// Reward table for both policy modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardTable {
    /// First action when it was UNANS (the episode ends there).
    pub unans: FeedbackRewards,
    /// First action when it was ANS.
    pub ans: FeedbackRewards,
    /// Second action: the returned span.
    pub span: FeedbackRewards,
    /// Single action of the span-only policy.
    pub span_only: FeedbackRewards,
}

impl Default for RewardTable {
    fn default() -> Self {
        RewardTable {
            unans: FeedbackRewards { correct: 1.0, partially_correct: 0.0, wrong: -1.0 },
            ans: FeedbackRewards { correct: 1.0, partially_correct: 1.0, wrong: 0.0 },
            span: FeedbackRewards { correct: 1.0, partially_correct: 0.5, wrong: -0.1 },
            span_only: FeedbackRewards { correct: 1.0, partially_correct: 0.5, wrong: -0.1 },
        }
    }
}

/// Rewards for the one or two actions of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardAssignment {
    pub r1: f64,
    pub r2: Option<f64>,
}

impl RewardAssignment {
    pub fn total(&self) -> f64 {
        self.r1 + self.r2.unwrap_or(0.0)
    }
}

impl RewardTable {
    pub fn map_feedback(&self, first_action: Answerability, f: Feedback) -> RewardAssignment {
        match first_action {
            Answerability::Unans => RewardAssignment { r1: self.unans.get(f), r2: None },
            Answerability::Ans => RewardAssignment { r1: self.ans.get(f), r2: Some(self.span.get(f)) },
        }
    }

    pub fn map_feedback_span_only(&self, f: Feedback) -> f64 {
        self.span_only.get(f)
    }
}

/// [`RewardTable::map_feedback`] with the default table.
pub fn map_feedback(first_action: Answerability, f: Feedback) -> RewardAssignment {
    RewardTable::default().map_feedback(first_action, f)
}

/// [`RewardTable::map_feedback_span_only`] with the default table.
pub fn map_feedback_span_only(f: Feedback) -> f64 {
    RewardTable::default().map_feedback_span_only(f)
}
