//! Simulated users and the deploy/learn orchestrator.
//!
//! A deployment alternates interaction phases (the fixed current policy
//! answers `T` questions and a rule-based oracle judges each answer) with
//! offline learning phases over everything logged so far.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{consolidate, deployment_stats, evaluate, token_f1, Answer, DeploymentStats, Metrics};
use crate::policy::{PolicyMode, PolicyParams, Prediction, Propensities, DEFAULT_MAX_ANSWER_LEN};
use crate::trainer::{train_round, Interaction, TrainReport, TrainerConfig};
use crate::types::{AnnotatedExample, Answerability, Feedback};

/// Distribution used when the oracle's label is replaced by noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Uniform over the two labels other than the true one.
    #[default]
    UniformOther,
    /// Fixed weights over all three labels (normalized on use).
    Weights { correct: f64, partially_correct: f64, wrong: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Token F1 at or above which an answer is judged CORRECT.
    pub correct_threshold: f64,
    /// Probability that the rule-based label is replaced by a noise draw.
    pub noise_rate: f64,
    pub noise_model: NoiseModel,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { correct_threshold: 1.0, noise_rate: 0.0, noise_model: NoiseModel::UniformOther, seed: 0 }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.correct_threshold > 0.0 && self.correct_threshold <= 1.0) {
            return Err(Error::Config("oracle.correct_threshold must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.noise_rate) && self.noise_rate != 1.0 {
            return Err(Error::Config("oracle.noise_rate must lie in [0, 1]".into()));
        }
        if let NoiseModel::Weights { correct, partially_correct, wrong } = self.noise_model {
            let w = [correct, partially_correct, wrong];
            if w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("oracle.noise_model weights must be non-negative with a positive sum".into()));
            }
        }
        Ok(())
    }
}

/// Noiseless judgement of a prediction against the references.
pub fn oracle_label(pred: &Prediction, gold: &AnnotatedExample, correct_threshold: f64) -> Result<Feedback> {
    let gold_answerable = consolidate(&gold.references).answerable;
    Ok(match pred.span {
        None if gold_answerable => Feedback::Wrong,
        None => Feedback::Correct,
        Some(span) => {
            let f1 = token_f1(&Answer::Text(gold.context.span_text(span)?), &gold.references);
            if f1 >= correct_threshold {
                Feedback::Correct
            } else if f1 > 0.0 {
                Feedback::PartiallyCorrect
            } else {
                Feedback::Wrong
            }
        }
    })
}

/// Simulated user feedback: the rule-based label, replaced with probability
/// `noise_rate` by a draw from the noise model.
pub fn simulate_feedback<R: Rng + ?Sized>(
    pred: &Prediction,
    gold: &AnnotatedExample,
    cfg: &OracleConfig,
    rng: &mut R,
) -> Result<Feedback> {
    if gold.references.is_empty() {
        return Err(Error::Input("gold example has no references".into()));
    }
    let label = oracle_label(pred, gold, cfg.correct_threshold)?;
    if cfg.noise_rate <= 0.0 || rng.random::<f64>() >= cfg.noise_rate {
        return Ok(label);
    }
    let weights = match cfg.noise_model {
        NoiseModel::UniformOther => Feedback::ALL.map(|f| if f == label { 0.0 } else { 1.0 }),
        NoiseModel::Weights { correct, partially_correct, wrong } => [correct, partially_correct, wrong],
    };
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for (f, w) in Feedback::ALL.into_iter().zip(weights) {
        if draw < w {
            return Ok(f);
        }
        draw -= w;
    }
    Ok(*Feedback::ALL.iter().rev().zip(weights.iter().rev()).find(|(_, w)| **w > 0.0).map(|(f, _)| f).unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Alternate interaction and learning every round.
    #[default]
    Default,
    /// As `Default`, with a span-only policy.
    SpanOnly,
    /// Collect all `rounds * interactions_per_round` interactions with the
    /// initial policy, then learn once.
    OneRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentConfig {
    pub rounds: usize,
    pub interactions_per_round: usize,
    pub trainer: TrainerConfig,
    pub oracle: OracleConfig,
    /// Fraction of round-1 questions answered "unanswerable" regardless of the policy.
    pub forced_unans_rate: f64,
    /// Used by the live service only.
    pub test_branch_prob: f64,
    pub variant: Variant,
    pub max_answer_len: usize,
    /// Seeds the order in which the example pool is consumed.
    pub seed: u64,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            rounds: 9,
            interactions_per_round: 200,
            trainer: TrainerConfig::bandit(),
            oracle: OracleConfig::default(),
            forced_unans_rate: 0.0,
            test_branch_prob: 0.33,
            variant: Variant::Default,
            max_answer_len: DEFAULT_MAX_ANSWER_LEN,
            seed: 0,
        }
    }
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.interactions_per_round == 0 {
            return Err(Error::Config("rounds and interactions_per_round must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.forced_unans_rate) {
            return Err(Error::Config("forced_unans_rate must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.test_branch_prob) {
            return Err(Error::Config("test_branch_prob must lie in [0, 1)".into()));
        }
        if self.max_answer_len == 0 {
            return Err(Error::Config("max_answer_len must be positive".into()));
        }
        self.trainer.validate()?;
        self.oracle.validate()
    }

    /// Nine rounds of about 200 interactions.
    pub fn long_term() -> Self {
        Self::default()
    }

    /// Ten rounds of 100 interactions: same total, more frequent updates.
    pub fn fewer_examples() -> Self {
        DeploymentConfig { rounds: 10, interactions_per_round: 100, ..Self::default() }
    }

    /// A single round with 800 interactions.
    pub fn one_round() -> Self {
        DeploymentConfig { rounds: 1, interactions_per_round: 800, variant: Variant::OneRound, ..Self::default() }
    }
}

/// Statistics of one round: deployment counts, the deployed checkpoint's test
/// metrics, and an audit of the learning phase that followed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    #[serde(flatten)]
    pub stats: DeploymentStats,
    pub metrics: Metrics,
    pub training: TrainReport,
}

impl RoundRecord {
    pub const CSV_PREFIX: [&'static str; 9] = [
        "round",
        "interactions",
        "frac_correct",
        "frac_partial",
        "frac_wrong",
        "mean_reward",
        "mean_r1",
        "mean_r2",
        "frac_pred_unans",
    ];

    pub fn csv_header() -> Vec<String> {
        Self::CSV_PREFIX
            .iter()
            .map(|s| s.to_string())
            .chain(Metrics::CSV_HEADER.iter().map(|s| format!("test_{s}")))
            .collect()
    }

    pub fn csv_row(&self) -> Vec<String> {
        let s = &self.stats;
        let mut row = vec![
            self.round.to_string(),
            s.interactions.to_string(),
            format!("{:.6}", s.frac_correct),
            format!("{:.6}", s.frac_partial),
            format!("{:.6}", s.frac_wrong),
            format!("{:.6}", s.mean_reward),
            format!("{:.6}", s.mean_r1),
            s.mean_r2.map(|v| format!("{v:.6}")).unwrap_or_default(),
            format!("{:.6}", s.frac_pred_unans),
        ];
        row.extend(self.metrics.csv_row());
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub variant: Variant,
    pub rounds: Vec<RoundRecord>,
    /// Test metrics of the policy after the last learning phase.
    pub final_metrics: Metrics,
    /// Ids of the pool examples consumed, in order.
    pub stream: Vec<String>,
    /// Every logged interaction, in order.
    #[serde(skip)]
    pub interactions: Vec<Interaction>,
}

/// Interaction phase: the fixed policy answers `t` examples from the stream.
///
/// In round 1 a `forced_unans_rate` fraction of answers are replaced by
/// "unanswerable"; those episodes log the policy's own probability of UNANS.
pub fn run_interaction_phase<'a, R: Rng + ?Sized>(
    params: &PolicyParams,
    examples: &mut impl Iterator<Item = &'a AnnotatedExample>,
    t: usize,
    round: usize,
    cfg: &DeploymentConfig,
    rng: &mut R,
) -> Result<(Vec<Interaction>, Option<DeploymentStats>)> {
    let mut out = Vec::with_capacity(t);
    for k in 0..t {
        let ex = examples
            .next()
            .ok_or_else(|| Error::Input(format!("example stream exhausted after {k} of {t} interactions")))?;
        let dists = params.forward(&ex.question, &ex.context)?;
        let mut pred = crate::policy::decode(&dists, cfg.max_answer_len)?;
        if round == 1 && cfg.forced_unans_rate > 0.0 && rng.random::<f64>() < cfg.forced_unans_rate {
            let propensities = match params.mode {
                PolicyMode::TwoHead => Propensities { answerability: Some(dists.p_unans.max(f64::MIN_POSITIVE)), span: None },
                PolicyMode::SpanOnly => Propensities {
                    answerability: None,
                    span: Some(dists.sentinel_prob().expect("span-only").max(f64::MIN_POSITIVE)),
                },
            };
            pred = Prediction { answerable: Answerability::Unans, span: None, propensities };
        }
        let feedback = simulate_feedback(&pred, ex, &cfg.oracle, rng)?;
        out.push(Interaction::from_prediction(ex.question.clone(), ex.context.clone(), &pred, feedback, round));
    }
    let stats = if out.is_empty() { None } else { Some(deployment_stats(&out, &cfg.trainer.rewards)?) };
    Ok((out, stats))
}

fn with_round(e: Error, round: usize) -> Error {
    match e {
        Error::Diverged { step, .. } => Error::Diverged { step, round: Some(round) },
        other => other,
    }
}

/// Full deployment run. `on_checkpoint` receives each round's trained parameters.
pub fn run_deployment(
    init: &PolicyParams,
    pool: &[AnnotatedExample],
    test: &[AnnotatedExample],
    cfg: &DeploymentConfig,
    mut on_checkpoint: impl FnMut(usize, &PolicyParams) -> Result<()>,
) -> Result<ExperimentLog> {
    cfg.validate()?;
    let wants_span_only = cfg.variant == Variant::SpanOnly;
    if wants_span_only != (init.mode == PolicyMode::SpanOnly) {
        return Err(Error::Config(format!(
            "variant {:?} does not match a {} initial policy",
            cfg.variant,
            init.mode.as_str()
        )));
    }
    let needed = cfg.rounds * cfg.interactions_per_round;
    if pool.len() < needed {
        return Err(Error::Input(format!("pool has {} examples, run needs {needed}", pool.len())));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    order.truncate(needed);
    let stream: Vec<String> = order.iter().map(|&i| pool[i].id.clone()).collect();
    let mut examples = order.iter().map(|&i| &pool[i]);
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(cfg.oracle.seed);

    let mut theta = init.clone();
    let mut history: Vec<Interaction> = Vec::new();
    let mut records = Vec::new();

    let (phases, per_phase) = match cfg.variant {
        Variant::OneRound => (1, needed),
        _ => (cfg.rounds, cfg.interactions_per_round),
    };
    for round in 1..=phases {
        let metrics = evaluate(&theta, test, cfg.max_answer_len)?;
        let (recent, stats) = run_interaction_phase(&theta, &mut examples, per_phase, round, cfg, &mut oracle_rng)?;
        let stats = stats.expect("interactions_per_round is positive");
        let trainer = TrainerConfig { seed: cfg.trainer.seed.wrapping_add(round as u64), ..cfg.trainer.clone() };
        let (next, training) = train_round(&theta, &recent, &history, &trainer).map_err(|e| with_round(e, round))?;
        theta = next;
        on_checkpoint(round, &theta)?;
        history.extend(recent);
        records.push(RoundRecord { round, stats, metrics, training });
    }
    Ok(ExperimentLog {
        variant: cfg.variant,
        rounds: records,
        final_metrics: evaluate(&theta, test, cfg.max_answer_len)?,
        stream,
        interactions: history,
    })
}

/// Mean and sample standard deviation of one metric across resampled sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpread {
    pub name: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
}

impl MetricSpread {
    pub fn from_values(name: &str, values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / n };
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MetricSpread { name: name.to_string(), values, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub per_set: Vec<Metrics>,
    pub summary: Vec<MetricSpread>,
}

/// Train independent copies of `init`, each on a uniformly drawn subset of
/// `set_size` logged interactions, and summarize the spread of test metrics.
#[allow(clippy::too_many_arguments)]
pub fn resample_sensitivity(
    init: &PolicyParams,
    feedback_pool: &[Interaction],
    k_sets: usize,
    set_size: usize,
    trainer: &TrainerConfig,
    test: &[AnnotatedExample],
    max_answer_len: usize,
    seed: u64,
) -> Result<SensitivityReport> {
    if k_sets == 0 || set_size == 0 {
        return Err(Error::Input("k_sets and set_size must be positive".into()));
    }
    if set_size > feedback_pool.len() {
        return Err(Error::Input(format!(
            "set size {set_size} exceeds the {} logged interactions",
            feedback_pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<Vec<usize>> = (0..k_sets)
        .map(|_| {
            let mut idx = index::sample(&mut rng, feedback_pool.len(), set_size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    let per_set = subsets
        .par_iter()
        .enumerate()
        .map(|(k, idx)| {
            let subset: Vec<Interaction> = idx.iter().map(|&i| feedback_pool[i].clone()).collect();
            let cfg = TrainerConfig { seed: trainer.seed.wrapping_add(k as u64), ..trainer.clone() };
            let (theta, _) = train_round(init, &subset, &[], &cfg)?;
            evaluate(&theta, test, max_answer_len)
        })
        .collect::<Result<Vec<_>>>()?;
    let spread = |name: &str, get: &dyn Fn(&Metrics) -> Option<f64>| {
        MetricSpread::from_values(name, per_set.iter().filter_map(get).collect())
    };
    let summary = vec![
        spread("f1", &|m| Some(m.f1)),
        spread("ans_f1", &|m| m.ans_f1),
        spread("unans_f1", &|m| m.unans_f1),
        spread("cls_accuracy", &|m| Some(m.cls_accuracy)),
        spread("pct_pred_unans", &|m| Some(m.pct_pred_unans)),
    ];
    Ok(SensitivityReport { per_set, summary })
}
