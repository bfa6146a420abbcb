use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use banditqa_core::checkpoint::{fingerprint, params_digest, save_checkpoint};
use banditqa_core::eval::normalize_answer;
use banditqa_core::datastore::{sample_aspects, sample_prompt, JsonlLog, TopicPool};
use banditqa_core::{
    train_round, AnnotatedExample, Answerability, Context, Feedback, Interaction, PolicyParams, Prediction,
    Question, Reference, TrainerConfig,
};

use crate::api::*;
use crate::error::ServiceError;

type Result<T, E = ServiceError> = std::result::Result<T, E>;

pub const FEEDBACK_LOG: &str = "feedback.jsonl";
pub const ANNOTATION_LOG: &str = "annotations.jsonl";
pub const ABANDONED_LOG: &str = "abandoned.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Probability that a question is routed to the annotation branch.
    pub test_branch_prob: f64,
    pub max_answer_len: usize,
    /// Idle time after which a session and its pending question are dropped.
    pub session_timeout_secs: f64,
    /// Reject a question a session has already asked.
    pub dedup_questions: bool,
    pub seed: u64,
    /// fsync every log record.
    pub fsync: bool,
    pub trainer: TrainerConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            test_branch_prob: 0.33,
            max_answer_len: 30,
            session_timeout_secs: 1800.0,
            dedup_questions: false,
            seed: 0,
            fsync: true,
            trainer: TrainerConfig::bandit(),
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> banditqa_core::Result<()> {
        let mut bad = Vec::new();
        if !(0.0..=1.0).contains(&self.test_branch_prob) {
            bad.push(format!("test_branch_prob must lie in [0, 1], got {}", self.test_branch_prob));
        }
        if self.max_answer_len == 0 {
            bad.push("max_answer_len must be positive".to_string());
        }
        if !(self.session_timeout_secs.is_finite() && self.session_timeout_secs > 0.0) {
            bad.push("session_timeout_secs must be positive".to_string());
        }
        if !bad.is_empty() {
            return Err(banditqa_core::Error::Config(bad.join("; ")));
        }
        self.trainer.validate()
    }

    pub fn session_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.session_timeout_secs)
    }
}

/// Immutable policy served to users.
#[derive(Debug)]
pub struct DeployedSnapshot {
    pub model_id: String,
    pub round: usize,
    pub params: PolicyParams,
}

impl DeployedSnapshot {
    pub fn new(params: PolicyParams, round: usize) -> Self {
        let digest = params_digest(&params);
        DeployedSnapshot { model_id: format!("r{round}-{}", &digest[..8]), round, params }
    }
}

/// One feedback-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedInteraction {
    pub session_id: String,
    pub question_id: String,
    pub model_id: String,
    pub logged_at_ms: u64,
    #[serde(flatten)]
    pub interaction: Interaction,
}

/// One annotation-log line: a gold answer collected for testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub session_id: String,
    pub question_id: String,
    pub model_id: String,
    pub logged_at_ms: u64,
    pub start_char: Option<usize>,
    pub end_char: Option<usize>,
    pub example: AnnotatedExample,
}

/// A question that expired without feedback or annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbandonedRecord {
    pub session_id: String,
    pub question_id: String,
    pub model_id: String,
    pub mode: Mode,
    pub question: String,
    pub expired_at_ms: u64,
}

#[derive(Debug)]
struct Pending {
    question_id: String,
    mode: Mode,
    model_id: String,
    round: usize,
    question: Question,
    context: Context,
    prediction: Option<Prediction>,
}

#[derive(Debug)]
enum Stage {
    Topics(Vec<usize>),
    Aspects { topic: usize, offered: Vec<usize> },
    Awaiting(Pending),
}

#[derive(Debug)]
struct Session {
    id: String,
    arm: usize,
    stage: Stage,
    last_seen: Instant,
    asked: HashSet<String>,
    /// Last question answered, for idempotent resubmission.
    completed: Option<(String, Mode)>,
}

#[derive(Debug, Default)]
struct FeedbackStore {
    records: Vec<Interaction>,
    /// Records before this index were used by an earlier advance.
    trained: usize,
}

/// Live interaction server state. All methods are synchronous; the HTTP
/// layer runs them on blocking threads.
pub struct Service {
    config: ServiceConfig,
    topics: TopicPool,
    dir: PathBuf,
    arms: RwLock<Vec<Arc<DeployedSnapshot>>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    feedback: Mutex<(JsonlLog<LoggedInteraction>, FeedbackStore)>,
    annotations: Mutex<(JsonlLog<AnnotationRecord>, usize)>,
    abandoned: JsonlLog<AbandonedRecord>,
    rng: Mutex<ChaCha8Rng>,
    advancing: Mutex<()>,
    last_error: Mutex<Option<String>>,
    next_question: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Questions that differ only in case, punctuation or articles share a key.
fn question_key(q: &Question) -> String {
    normalize_answer(&q.raw_text).join(" ")
}

impl Service {
    /// Start serving `arms` (the first is the primary, the one advances train).
    ///
    /// Logs live under `dir`. An existing feedback log is reloaded; records
    /// answered by a snapshot older than the primary count as already trained.
    pub fn new(
        config: ServiceConfig,
        topics: TopicPool,
        arms: Vec<DeployedSnapshot>,
        dir: impl AsRef<Path>,
    ) -> banditqa_core::Result<Self> {
        config.validate()?;
        topics.validate()?;
        if topics.topics.len() < banditqa_core::datastore::PROMPT_CHOICES {
            return Err(banditqa_core::Error::Config(format!(
                "topic pool needs at least {} topics",
                banditqa_core::datastore::PROMPT_CHOICES
            )));
        }
        if arms.is_empty() {
            return Err(banditqa_core::Error::Config("no snapshot to deploy".into()));
        }
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
        let fp = fingerprint(&config.trainer)?;
        for a in &arms {
            let path = dir.join(CHECKPOINT_DIR).join(format!("{}.bqac", a.model_id));
            if !path.exists() {
                save_checkpoint(&path, &a.params, a.round, &fp)?;
            }
        }

        fn open<T: Serialize + serde::de::DeserializeOwned>(
            path: PathBuf,
            fsync: bool,
        ) -> banditqa_core::Result<JsonlLog<T>> {
            let log = JsonlLog::open(path)?;
            Ok(if fsync { log } else { log.without_sync() })
        }
        let feedback_log = open(dir.join(FEEDBACK_LOG), config.fsync)?;
        let mut old = Vec::new();
        let mut new = Vec::new();
        let primary_round = arms[0].round;
        for r in JsonlLog::<LoggedInteraction>::load(dir.join(FEEDBACK_LOG))?.records {
            if r.interaction.round <= primary_round {
                old.push(r.interaction);
            } else {
                new.push(r.interaction);
            }
        }
        let store = FeedbackStore { trained: old.len(), records: old.into_iter().chain(new).collect() };
        let annotation_log = open(dir.join(ANNOTATION_LOG), config.fsync)?;
        let n_annotations = JsonlLog::<AnnotationRecord>::load(dir.join(ANNOTATION_LOG))?.records.len();

        let abandoned = open(dir.join(ABANDONED_LOG), config.fsync)?;
        Ok(Service {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            config,
            topics,
            arms: RwLock::new(arms.into_iter().map(Arc::new).collect()),
            sessions: Mutex::new(HashMap::new()),
            feedback: Mutex::new((feedback_log, store)),
            annotations: Mutex::new((annotation_log, n_annotations)),
            abandoned,
            advancing: Mutex::new(()),
            last_error: Mutex::new(None),
            next_question: AtomicU64::new(1),
            dir,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn feedback_log_path(&self) -> PathBuf {
        self.dir.join(FEEDBACK_LOG)
    }

    pub fn annotation_log_path(&self) -> PathBuf {
        self.dir.join(ANNOTATION_LOG)
    }

    pub fn abandoned_log_path(&self) -> PathBuf {
        self.dir.join(ABANDONED_LOG)
    }

    pub fn checkpoint_path(&self, model_id: &str) -> PathBuf {
        self.dir.join(CHECKPOINT_DIR).join(format!("{model_id}.bqac"))
    }

    /// Current snapshot of an arm.
    pub fn snapshot(&self, arm: usize) -> Option<Arc<DeployedSnapshot>> {
        self.arms.read().unwrap_or_else(|e| e.into_inner()).get(arm).cloned()
    }

    fn rng(&self) -> MutexGuard<'_, ChaCha8Rng> {
        lock(&self.rng)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        lock(&self.sessions).get(id).cloned().ok_or(ServiceError::UnknownSession)
    }

    /// Lock a live session and mark it active.
    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T>) -> Result<T> {
        let s = self.session(id)?;
        let mut s = lock(&s);
        if s.last_seen.elapsed() > self.config.session_timeout() {
            return Err(ServiceError::UnknownSession);
        }
        s.last_seen = Instant::now();
        f(&mut s)
    }

    fn topic_prompt(&self, offered: &[usize]) -> PromptResponse {
        PromptResponse {
            stage: PromptStage::Topic,
            topics: Some(offered.iter().map(|&i| self.topic_choice(i)).collect()),
            topic: None,
            aspects: None,
        }
    }

    fn topic_choice(&self, i: usize) -> TopicChoice {
        let t = &self.topics.topics[i];
        TopicChoice { topic_id: i, name: t.name.clone(), intro: t.intro.clone() }
    }

    fn aspect_prompt(&self, topic: usize, offered: &[usize]) -> PromptResponse {
        let t = &self.topics.topics[topic];
        PromptResponse {
            stage: PromptStage::Aspect,
            topics: None,
            topic: Some(self.topic_choice(topic)),
            aspects: Some(
                offered.iter().map(|&i| AspectChoice { aspect_id: i, name: t.aspects[i].name.clone() }).collect(),
            ),
        }
    }

    fn fresh_topics(&self) -> Result<Vec<usize>> {
        Ok(sample_prompt(&self.topics, &mut *self.rng())?)
    }

    /// Open a session, assigned uniformly to one of the deployed arms.
    pub fn create_session(&self) -> Result<SessionResponse> {
        let n_arms = self.arms.read().unwrap_or_else(|e| e.into_inner()).len();
        let arm = if n_arms > 1 { self.rng().random_range(0..n_arms) } else { 0 };
        let session = Session {
            id: uuid::Uuid::new_v4().simple().to_string(),
            arm,
            stage: Stage::Topics(self.fresh_topics()?),
            last_seen: Instant::now(),
            asked: HashSet::new(),
            completed: None,
        };
        let model_id = self.snapshot(arm).expect("arm exists").model_id.clone();
        let id = session.id.clone();
        lock(&self.sessions).insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(SessionResponse { session_id: id, model_id })
    }

    pub fn prompt(&self, session_id: &str) -> Result<PromptResponse> {
        self.with_session(session_id, |s| match &s.stage {
            Stage::Topics(offered) => Ok(self.topic_prompt(offered)),
            Stage::Aspects { topic, offered } => Ok(self.aspect_prompt(*topic, offered)),
            Stage::Awaiting(p) => Err(ServiceError::State(format!(
                "question {} is waiting for {}",
                p.question_id,
                if p.mode == Mode::Feedback { "feedback" } else { "an annotation" }
            ))),
        })
    }

    pub fn select_topic(&self, req: &TopicRequest) -> Result<PromptResponse> {
        self.with_session(&req.session_id, |s| {
            let Stage::Topics(offered) = &s.stage else {
                return Err(ServiceError::State("no topic choice is open".into()));
            };
            if !offered.contains(&req.topic_id) {
                return Err(ServiceError::Validation(format!("topic {} was not offered", req.topic_id)));
            }
            let topic = req.topic_id;
            let aspects = sample_aspects(&self.topics.topics[topic], &mut *self.rng())?;
            let out = self.aspect_prompt(topic, &aspects);
            s.stage = Stage::Aspects { topic, offered: aspects };
            Ok(out)
        })
    }

    /// Answer a question with the session's snapshot as of now, or route it
    /// to the annotation branch.
    pub fn ask(&self, req: &QuestionRequest) -> Result<QuestionResponse> {
        self.with_session(&req.session_id, |s| {
            let (topic, offered) = match &s.stage {
                Stage::Aspects { topic, offered } => (*topic, offered),
                Stage::Topics(_) => return Err(ServiceError::State("select a topic first".into())),
                Stage::Awaiting(p) => {
                    return Err(ServiceError::State(format!("question {} is still pending", p.question_id)))
                }
            };
            if !offered.contains(&req.aspect_id) {
                return Err(ServiceError::Validation(format!("aspect {} was not offered", req.aspect_id)));
            }
            if req.question.trim().is_empty() {
                return Err(ServiceError::Validation("question is empty".into()));
            }
            let t = &self.topics.topics[topic];
            let aspect = &t.aspects[req.aspect_id];
            let question = Question::with_prompt(&req.question, &t.name, &aspect.name)
                .map_err(|e| ServiceError::Validation(e.to_string()))?;
            let key = question_key(&question);
            if self.config.dedup_questions && s.asked.contains(&key) {
                return Err(ServiceError::Validation("this question was already asked in this session".into()));
            }

            let snapshot = self.snapshot(s.arm).expect("arm exists");
            let annotate = self.rng().random_bool(self.config.test_branch_prob);
            let context = aspect.context.clone();
            let (mode, prediction, answer) = if annotate {
                (Mode::Annotate, None, None)
            } else {
                let pred = snapshot.params.predict(&question, &context, self.config.max_answer_len)?;
                let view = answer_view(&context, &pred)?;
                (Mode::Feedback, Some(pred), Some(view))
            };
            let question_id = format!("q{}", self.next_question.fetch_add(1, Ordering::Relaxed));
            s.asked.insert(key);
            let out = QuestionResponse {
                question_id: question_id.clone(),
                mode,
                model_id: snapshot.model_id.clone(),
                round: snapshot.round,
                context: ContextView { text: context.raw_text.clone(), token_offsets: context.offsets.clone() },
                answer,
            };
            s.stage = Stage::Awaiting(Pending {
                question_id,
                mode,
                model_id: snapshot.model_id.clone(),
                round: snapshot.round,
                question,
                context,
                prediction,
            });
            Ok(out)
        })
    }

    /// Resolve which pending question a submission targets. `Ok(None)` means
    /// an idempotent repeat of the last completed one.
    fn target<'a>(s: &'a Session, question_id: Option<&str>, mode: Mode) -> Result<Option<&'a Pending>> {
        if let Stage::Awaiting(p) = &s.stage {
            if question_id.is_none_or(|q| q == p.question_id) {
                if p.mode != mode {
                    return Err(ServiceError::State(format!(
                        "question {} expects {}",
                        p.question_id,
                        if p.mode == Mode::Feedback { "feedback" } else { "an annotation" }
                    )));
                }
                return Ok(Some(p));
            }
        }
        match &s.completed {
            Some((q, m)) if *m == mode && question_id.is_none_or(|id| id == q) => Ok(None),
            _ => Err(ServiceError::State(match question_id {
                Some(q) => format!("question {q} is not pending"),
                None => "no question is pending".into(),
            })),
        }
    }

    fn complete(&self, s: &mut Session, question_id: String, mode: Mode) -> Result<()> {
        s.completed = Some((question_id, mode));
        s.stage = Stage::Topics(self.fresh_topics()?);
        Ok(())
    }

    pub fn submit_feedback(&self, req: &FeedbackRequest) -> Result<Ack> {
        let feedback: Feedback = req.feedback.parse().map_err(|e: banditqa_core::Error| {
            ServiceError::Validation(format!("{e}; expected CORRECT, PARTIALLY_CORRECT or WRONG"))
        })?;
        self.with_session(&req.session_id, |s| {
            let Some(p) = Self::target(s, req.question_id.as_deref(), Mode::Feedback)? else {
                let q = s.completed.as_ref().expect("completed").0.clone();
                return Ok(Ack { question_id: q, duplicate: true });
            };
            let pred = p.prediction.as_ref().expect("feedback mode has a prediction");
            let record = LoggedInteraction {
                session_id: s.id.clone(),
                question_id: p.question_id.clone(),
                model_id: p.model_id.clone(),
                logged_at_ms: now_ms(),
                interaction: Interaction::from_prediction(
                    p.question.clone(),
                    p.context.clone(),
                    pred,
                    feedback,
                    p.round + 1,
                ),
            };
            {
                let mut fb = lock(&self.feedback);
                fb.0.append(&record)?;
                fb.1.records.push(record.interaction);
            }
            let q = p.question_id.clone();
            self.complete(s, q.clone(), Mode::Feedback)?;
            Ok(Ack { question_id: q, duplicate: false })
        })
    }

    pub fn submit_annotation(&self, req: &AnnotationRequest) -> Result<Ack> {
        self.with_session(&req.session_id, |s| {
            let Some(p) = Self::target(s, req.question_id.as_deref(), Mode::Annotate)? else {
                let q = s.completed.as_ref().expect("completed").0.clone();
                return Ok(Ack { question_id: q, duplicate: true });
            };
            let reference = if req.unanswerable {
                if req.start_char.is_some() || req.end_char.is_some() {
                    return Err(ServiceError::Validation("an unanswerable annotation takes no span".into()));
                }
                Reference::Unanswerable
            } else {
                let (Some(a), Some(b)) = (req.start_char, req.end_char) else {
                    return Err(ServiceError::Validation("start_char and end_char are required".into()));
                };
                let n_chars = p.context.raw_text.chars().count();
                if b > n_chars {
                    return Err(ServiceError::Validation(format!("end_char {b} is past the context ({n_chars} chars)")));
                }
                let span = p.context.span_for_chars(a, b).ok_or_else(|| {
                    ServiceError::Validation(format!("characters [{a}, {b}) cover no context token"))
                })?;
                Reference::Answer { text: p.context.span_text(span)?, span: Some(span) }
            };
            let record = AnnotationRecord {
                session_id: s.id.clone(),
                question_id: p.question_id.clone(),
                model_id: p.model_id.clone(),
                logged_at_ms: now_ms(),
                start_char: req.start_char,
                end_char: req.end_char,
                example: AnnotatedExample {
                    id: p.question_id.clone(),
                    question: p.question.clone(),
                    context: p.context.clone(),
                    references: vec![reference],
                },
            };
            {
                let mut ann = lock(&self.annotations);
                ann.0.append(&record)?;
                ann.1 += 1;
            }
            let q = p.question_id.clone();
            self.complete(s, q.clone(), Mode::Annotate)?;
            Ok(Ack { question_id: q, duplicate: false })
        })
    }

    /// Drop sessions idle past the timeout, logging any pending question as
    /// abandoned. Returns the number of sessions removed.
    pub fn expire_idle(&self) -> Result<usize> {
        let timeout = self.config.session_timeout();
        let mut sessions = lock(&self.sessions);
        let mut expired = Vec::new();
        sessions.retain(|_, s| {
            let Ok(s) = s.try_lock() else { return true };
            if s.last_seen.elapsed() > timeout {
                if let Stage::Awaiting(p) = &s.stage {
                    expired.push(AbandonedRecord {
                        session_id: s.id.clone(),
                        question_id: p.question_id.clone(),
                        model_id: p.model_id.clone(),
                        mode: p.mode,
                        question: p.question.raw_text.clone(),
                        expired_at_ms: now_ms(),
                    });
                }
                false
            } else {
                true
            }
        });
        let removed = expired.len();
        drop(sessions);
        for r in &expired {
            self.abandoned.append(r)?;
        }
        Ok(removed)
    }

    pub fn status(&self) -> RoundStatus {
        let arms = self.arms.read().unwrap_or_else(|e| e.into_inner()).clone();
        let (pending, total) = {
            let fb = lock(&self.feedback);
            (fb.1.records.len() - fb.1.trained, fb.1.records.len())
        };
        RoundStatus {
            round: arms[0].round,
            model_id: arms[0].model_id.clone(),
            arms: arms.iter().map(|a| ArmStatus { model_id: a.model_id.clone(), round: a.round }).collect(),
            pending_interactions: pending,
            total_interactions: total,
            annotations: lock(&self.annotations).1,
            active_sessions: lock(&self.sessions).len(),
            advancing: self.advancing.try_lock().is_err(),
            last_error: lock(&self.last_error).clone(),
        }
    }

    /// Train the primary snapshot on every interaction logged since the last
    /// advance, rehearsing all earlier ones, then swap it in.
    ///
    /// Interactions logged while training runs are left for the next advance.
    /// On failure the old snapshot stays deployed.
    pub fn advance(&self, trainer: Option<TrainerConfig>) -> Result<AdvanceResponse> {
        let Ok(_guard) = self.advancing.try_lock() else {
            return Err(ServiceError::Busy);
        };
        let mut cfg = trainer.unwrap_or_else(|| self.config.trainer.clone());
        cfg.validate().map_err(|e| ServiceError::Validation(e.to_string()))?;
        let current = self.snapshot(0).expect("primary arm");
        let (recent, history, cut) = {
            let fb = lock(&self.feedback);
            let store = &fb.1;
            let cut = store.records.len();
            (store.records[store.trained..cut].to_vec(), store.records[..store.trained].to_vec(), cut)
        };
        if recent.is_empty() {
            return Err(ServiceError::Precondition("no interactions were logged since the last advance".into()));
        }
        let round = current.round + 1;
        cfg.seed = cfg.seed.wrapping_add(round as u64);
        let trained = train_round(&current.params, &recent, &history, &cfg).and_then(|(params, report)| {
            let next = DeployedSnapshot::new(params, round);
            save_checkpoint(self.checkpoint_path(&next.model_id), &next.params, round, &fingerprint(&cfg)?)?;
            Ok((next, report))
        });
        let (next, report) = match trained {
            Ok(t) => t,
            Err(e) => {
                let msg = e.to_string();
                *lock(&self.last_error) = Some(msg.clone());
                return Err(ServiceError::TrainingFailed(msg));
            }
        };
        let out = AdvanceResponse {
            round,
            model_id: next.model_id.clone(),
            previous_model_id: current.model_id.clone(),
            recent: recent.len(),
            history: history.len(),
            steps: report.steps,
        };
        {
            let mut arms = self.arms.write().unwrap_or_else(|e| e.into_inner());
            arms[0] = Arc::new(next);
            lock(&self.feedback).1.trained = cut;
        }
        *lock(&self.last_error) = None;
        log::info!("advanced to {} on {} new interactions", out.model_id, out.recent);
        Ok(out)
    }
}

pub(crate) fn answer_view(context: &Context, pred: &Prediction) -> banditqa_core::Result<AnswerView> {
    Ok(match (pred.answerable, pred.span) {
        (Answerability::Ans, Some(span)) => {
            let (a, b) = context.char_range(span)?;
            AnswerView {
                unanswerable: false,
                text: Some(context.span_text(span)?),
                start_char: Some(a),
                end_char: Some(b),
                token_start: Some(span.start),
                token_end: Some(span.end),
            }
        }
        _ => AnswerView {
            unanswerable: true,
            text: None,
            start_char: None,
            end_char: None,
            token_start: None,
            token_end: None,
        },
    })
}
