//! Live feedback service: serves prompts, answers questions with the deployed
//! snapshot, logs feedback and gold annotations, and advances rounds.
//!
//! Endpoints (JSON bodies, errors as `{code, message}`):
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/session` | | [`SessionResponse`] |
//! | GET | `/prompt` | `?session_id=` | [`PromptResponse`] |
//! | POST | `/topic` | [`TopicRequest`] | [`PromptResponse`] |
//! | POST | `/question` | [`QuestionRequest`] | [`QuestionResponse`] |
//! | POST | `/feedback` | [`FeedbackRequest`] | [`Ack`] |
//! | POST | `/annotation` | [`AnnotationRequest`] | [`Ack`] |
//! | GET | `/admin/round` | | [`RoundStatus`] |
//! | POST | `/admin/advance` | optional [`AdvanceRequest`] | [`AdvanceResponse`] |

pub mod api;
mod error;
mod http;
mod service;

pub use api::*;
pub use error::{ErrorBody, ServiceError};
pub use http::{router, serve};
pub use service::{
    AbandonedRecord, AnnotationRecord, DeployedSnapshot, LoggedInteraction, Service, ServiceConfig, ABANDONED_LOG,
    ANNOTATION_LOG, CHECKPOINT_DIR, FEEDBACK_LOG,
};
