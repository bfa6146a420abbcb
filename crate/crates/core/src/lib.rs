//! Extractive question answering that keeps improving from user feedback.
//!
//! A compact two-head policy answers questions over a paragraph; users (or a
//! simulated oracle) rate each answer; rounds of offline learning turn the
//! ratings into rewards and update the policy with clipped importance
//! weights against the logged propensities.

pub mod checkpoint;
pub mod corpus;
pub mod datastore;
pub mod error;
pub mod eval;
pub mod policy;
pub mod rewards;
pub mod simulator;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use eval::{evaluate, token_f1, Answer, DeploymentStats, Metrics};
pub use policy::{decode, PolicyDims, PolicyDistributions, PolicyMode, PolicyParams, Prediction, Propensities};
pub use rewards::{map_feedback, map_feedback_span_only, RewardAssignment, RewardTable};
pub use simulator::{
    run_deployment, run_interaction_phase, resample_sensitivity, simulate_feedback, DeploymentConfig, ExperimentLog,
    OracleConfig, RoundRecord, Variant,
};
pub use trainer::{initialize, train_initial, train_round, Interaction, TrainReport, TrainerConfig};
pub use types::{AnnotatedExample, Answerability, Context, Feedback, Question, Reference, Span};
