//! Request and response bodies of the HTTP API.

use serde::{Deserialize, Serialize};

use banditqa_core::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResponse {
    pub session_id: String,
    /// Snapshot the session is assigned to at creation.
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionQuery {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicChoice {
    pub topic_id: usize,
    pub name: String,
    pub intro: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectChoice {
    pub aspect_id: usize,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptStage {
    Topic,
    Aspect,
}

/// What the user picks from next. Never carries a context paragraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResponse {
    pub stage: PromptStage,
    /// Offered topics, present at the `TOPIC` stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topics: Option<Vec<TopicChoice>>,
    /// Selected topic, present at the `ASPECT` stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topic: Option<TopicChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aspects: Option<Vec<AspectChoice>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRequest {
    pub session_id: String,
    pub topic_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRequest {
    pub session_id: String,
    pub aspect_id: usize,
    pub question: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// The model answered; the user rates the answer.
    Feedback,
    /// The user supplies the gold answer.
    Annotate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextView {
    pub text: String,
    /// `[start, end)` character offsets of every token.
    pub token_offsets: Vec<(usize, usize)>,
}

/// The model's answer. Character offsets are `[start, end)` in Unicode
/// scalar values; token indices are 1-based and inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerView {
    pub unanswerable: bool,
    pub text: Option<String>,
    pub start_char: Option<usize>,
    pub end_char: Option<usize>,
    pub token_start: Option<usize>,
    pub token_end: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResponse {
    pub question_id: String,
    pub mode: Mode,
    pub model_id: String,
    pub round: usize,
    pub context: ContextView,
    /// Absent in `ANNOTATE` mode.
    pub answer: Option<AnswerView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub session_id: String,
    /// Defaults to the pending question.
    #[serde(default)]
    pub question_id: Option<String>,
    /// `CORRECT`, `PARTIALLY_CORRECT` or `WRONG`.
    pub feedback: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub session_id: String,
    #[serde(default)]
    pub question_id: Option<String>,
    #[serde(default)]
    pub unanswerable: bool,
    #[serde(default)]
    pub start_char: Option<usize>,
    #[serde(default)]
    pub end_char: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub question_id: String,
    /// True when the same submission had already been recorded.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStatus {
    pub model_id: String,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStatus {
    /// Round of the primary snapshot, the one trained by advances.
    pub round: usize,
    pub model_id: String,
    pub arms: Vec<ArmStatus>,
    /// Logged interactions not yet used for training.
    pub pending_interactions: usize,
    pub total_interactions: usize,
    pub annotations: usize,
    pub active_sessions: usize,
    pub advancing: bool,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvanceRequest {
    /// Overrides the service's trainer configuration for this advance.
    #[serde(default)]
    pub trainer: Option<TrainerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceResponse {
    pub round: usize,
    pub model_id: String,
    pub previous_model_id: String,
    pub recent: usize,
    pub history: usize,
    pub steps: usize,
}
