//! Offline bandit learning and supervised initialization.
//!
//! Each logged interaction contributes the ascent direction
//! `a1 * r1 * grad log P_u(u) + a2 * r2 * grad log P_s(i, j) + gamma * grad H(P_u)`,
//! where `a1`, `a2` are clipped importance ratios against the logged
//! propensities, held constant during differentiation. The span term is
//! dropped for episodes that stopped at UNANS.

mod rehearsal;

pub use rehearsal::{make_rehearsal_batches, Batch};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    floored_ln, upstream_entropy, upstream_log_ps, upstream_log_pu, LabeledExample, ParamGradient, PolicyDims,
    PolicyMode, PolicyParams, Prediction, Upstream, DEFAULT_EMBED_SCALE,
};
use crate::rewards::{RewardAssignment, RewardTable};
use crate::types::{AnnotatedExample, Answerability, Context, Feedback, Question, Reference, Span};

/// One logged episode with the behavior policy's propensities.
///
/// Two-head episodes carry `behavior_pu` always and `behavior_ps` iff a span
/// was returned. Span-only episodes carry only `behavior_ps`, which is the
/// sentinel probability when the answer was "unanswerable".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub question: Question,
    pub context: Context,
    pub answerable: Answerability,
    pub span: Option<Span>,
    pub feedback: Feedback,
    pub behavior_pu: Option<f64>,
    pub behavior_ps: Option<f64>,
    pub round: usize,
}

impl Interaction {
    pub fn from_prediction(
        question: Question,
        context: Context,
        pred: &Prediction,
        feedback: Feedback,
        round: usize,
    ) -> Self {
        Interaction {
            question,
            context,
            answerable: pred.answerable,
            span: pred.span,
            feedback,
            behavior_pu: pred.propensities.answerability,
            behavior_ps: pred.propensities.span,
            round,
        }
    }

    pub fn mode(&self) -> PolicyMode {
        if self.behavior_pu.is_some() {
            PolicyMode::TwoHead
        } else {
            PolicyMode::SpanOnly
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |p: Option<f64>| p.is_none_or(|x| x > 0.0 && x <= 1.0);
        if !positive(self.behavior_pu) || !positive(self.behavior_ps) {
            return Err(Error::Input("propensities must lie in (0, 1]".into()));
        }
        if (self.answerable == Answerability::Ans) != self.span.is_some() {
            return Err(Error::Input("span must be present iff the episode answered".into()));
        }
        if let Some(s) = self.span {
            s.check(self.context.len())?;
        }
        match self.mode() {
            PolicyMode::TwoHead if self.span.is_some() != self.behavior_ps.is_some() => {
                Err(Error::Input("span propensity must be logged iff a span was returned".into()))
            }
            PolicyMode::SpanOnly if self.behavior_ps.is_none() => {
                Err(Error::Input("interaction has no logged propensity".into()))
            }
            _ => Ok(()),
        }
    }

    /// Rewards under `table`. Span-only episodes report their single reward as `r1`.
    pub fn rewards(&self, table: &RewardTable) -> RewardAssignment {
        match self.mode() {
            PolicyMode::TwoHead => table.map_feedback(self.answerable, self.feedback),
            PolicyMode::SpanOnly => RewardAssignment { r1: table.map_feedback_span_only(self.feedback), r2: None },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Decays linearly from the base rate to zero over the run.
    #[default]
    Linear,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// Weight of the answerability entropy bonus.
    pub entropy_coeff: f64,
    /// Upper bound on the importance ratio.
    pub ips_clip: f64,
    /// Weight of the answerability cross-entropy in supervised training.
    pub lambda: f64,
    pub momentum: f64,
    pub rewards: RewardTable,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self::bandit()
    }
}

impl TrainerConfig {
    /// Defaults for learning from feedback rounds.
    pub fn bandit() -> Self {
        TrainerConfig {
            batch_size: 36,
            epochs: 40,
            learning_rate: 1.0,
            lr_schedule: LrSchedule::Linear,
            entropy_coeff: 1.5,
            ips_clip: 1.0,
            lambda: 1.0,
            momentum: 0.0,
            rewards: RewardTable::default(),
            seed: 0,
        }
    }

    /// Defaults for supervised initialization.
    pub fn supervised() -> Self {
        TrainerConfig { batch_size: 10, epochs: 20, learning_rate: 1.0, ..Self::bandit() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad.push("learning_rate must be positive");
        }
        if !(self.entropy_coeff >= 0.0) {
            bad.push("entropy_coeff must be non-negative");
        }
        if !(self.ips_clip > 0.0) {
            bad.push("ips_clip must be positive");
        }
        if !(self.lambda >= 0.0) {
            bad.push("lambda must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bad.push("momentum must lie in [0, 1)");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Linear => self.learning_rate * (1.0 - step as f64 / total.max(1) as f64),
        }
    }
}

/// Hyperparameter grids reported for the full-scale model; kept as presets.
pub mod full_scale {
    pub const BATCH_SIZE: usize = 35;
    pub const LEARNING_RATES: [f64; 7] = [5e-5, 3e-5, 1e-5, 9e-6, 7e-6, 5e-6, 3e-6];
    pub const EPOCHS: [usize; 4] = [14, 20, 24, 30];
    pub const ENTROPY_COEFFS: [f64; 9] = [1.5, 1.7, 1.9, 2.0, 2.1, 2.3, 2.5, 3.0, 5.0];
    pub const INIT_LEARNING_RATE: f64 = 3e-5;
    pub const INIT_BATCH_SIZE: usize = 10;
    pub const INIT_EPOCHS: usize = 10;
    /// Answerability weight used for the 128-example initialization.
    pub const LAMBDA_SMALL_INIT: f64 = 10.0;
}

/// Clipped importance ratio `min(exp(current - behavior), clip)`.
pub fn ips_coefficient(current_logp: f64, behavior_logp: f64, clip: f64) -> Result<f64> {
    if !current_logp.is_finite() || !behavior_logp.is_finite() || !clip.is_finite() {
        return Err(Error::Input("importance ratio inputs must be finite".into()));
    }
    if clip <= 0.0 {
        return Err(Error::Input("clip must be positive".into()));
    }
    Ok((current_logp - behavior_logp).exp().min(clip))
}

/// Importance ratios used for one interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alphas {
    pub answerability: Option<f64>,
    pub span: Option<f64>,
}

impl Alphas {
    pub fn iter(&self) -> impl Iterator<Item = f64> {
        self.answerability.into_iter().chain(self.span)
    }
}

/// Ascent direction for one interaction (see the module docs).
pub fn bandit_update_direction(params: &PolicyParams, x: &Interaction, cfg: &TrainerConfig) -> Result<ParamGradient> {
    Ok(direction_with_alphas(params, x, cfg)?.0)
}

pub fn direction_with_alphas(
    params: &PolicyParams,
    x: &Interaction,
    cfg: &TrainerConfig,
) -> Result<(ParamGradient, Alphas)> {
    if x.mode() != params.mode {
        return Err(Error::Input(format!(
            "interaction logged by a {} policy cannot train a {} policy",
            x.mode().as_str(),
            params.mode.as_str()
        )));
    }
    x.validate()?;
    let trace = params.trace(&x.question, &x.context)?;
    let dists = &trace.dists;
    let rewards = x.rewards(&cfg.rewards);
    let mut up = Upstream::zeros(dists.p_start.len());
    let mut alphas = Alphas { answerability: None, span: None };

    match params.mode {
        PolicyMode::TwoHead => {
            let behavior = x.behavior_pu.expect("two-head interactions log P_u");
            let a1 = ips_coefficient(floored_ln(dists.answer_prob(x.answerable)), floored_ln(behavior), cfg.ips_clip)?;
            alphas.answerability = Some(a1);
            up.add_scaled(&upstream_log_pu(&trace, x.answerable), a1 * rewards.r1);
            if let (Some(span), Some(r2)) = (x.span, rewards.r2) {
                let behavior = x.behavior_ps.expect("validated above");
                let a2 = ips_coefficient(floored_ln(dists.span_prob(span)), floored_ln(behavior), cfg.ips_clip)?;
                alphas.span = Some(a2);
                up.add_scaled(&upstream_log_ps(&trace, Some(span)), a2 * r2);
            }
            up.add_scaled(&upstream_entropy(&trace), cfg.entropy_coeff);
        }
        PolicyMode::SpanOnly => {
            let current = match x.span {
                Some(s) => dists.span_prob(s),
                None => dists.sentinel_prob().expect("span-only"),
            };
            let behavior = x.behavior_ps.expect("validated above");
            let a = ips_coefficient(floored_ln(current), floored_ln(behavior), cfg.ips_clip)?;
            alphas.span = Some(a);
            up.add_scaled(&upstream_log_ps(&trace, x.span), a * rewards.r1);
        }
    }
    Ok((params.backward(&trace, &up), alphas))
}

/// What happened during one learning phase, for auditing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// `(recent, history)` counts of every batch, in order.
    pub batch_composition: Vec<(usize, usize)>,
    /// Ratios of the recent examples in the first update step.
    pub first_step_recent_alphas: Vec<f64>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub alpha_count: usize,
}

impl TrainReport {
    fn record(&mut self, a: f64) {
        self.alpha_min = Some(self.alpha_min.map_or(a, |m| m.min(a)));
        self.alpha_max = Some(self.alpha_max.map_or(a, |m| m.max(a)));
        self.alpha_count += 1;
    }
}

fn apply_step(
    params: &mut PolicyParams,
    velocity: &mut Option<ParamGradient>,
    mut grad: ParamGradient,
    lr: f64,
    momentum: f64,
    step: usize,
) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::Diverged { step, round: None });
    }
    if momentum > 0.0 {
        let v = velocity.get_or_insert_with(|| ParamGradient::zeros(&params.dims));
        v.scale(momentum);
        v.add_scaled(&grad, 1.0);
        grad = v.clone();
    }
    let rows = params.add_scaled(&grad, lr);
    params.check_finite_rows(&rows).map_err(|_| Error::Diverged { step, round: None })
}

/// One learning phase: `epochs` passes of rehearsal batches over `recent`,
/// each batch's mean direction applied as a gradient-ascent step.
pub fn train_round(
    params: &PolicyParams,
    recent: &[Interaction],
    history: &[Interaction],
    cfg: &TrainerConfig,
) -> Result<(PolicyParams, TrainReport)> {
    cfg.validate()?;
    if recent.is_empty() {
        return Err(Error::Input("no interactions to learn from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = params.clone();
    let mut report = TrainReport::default();
    let mut velocity = None;
    let per_epoch = recent.len().div_ceil(cfg.batch_size.div_ceil(2));
    let total = per_epoch * cfg.epochs;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        for batch in make_rehearsal_batches(recent.len(), history.len(), cfg.batch_size, &mut rng) {
            report.batch_composition.push((batch.recent.len(), batch.history.len()));
            let members: Vec<(&Interaction, bool)> = batch
                .recent
                .iter()
                .map(|&i| (&recent[i], true))
                .chain(batch.history.iter().map(|&i| (&history[i], false)))
                .collect();
            let results = members
                .par_iter()
                .map(|(x, _)| direction_with_alphas(&theta, x, cfg))
                .collect::<Result<Vec<_>>>()?;
            let mut sum = ParamGradient::zeros(&theta.dims);
            for ((g, alphas), (_, is_recent)) in results.iter().zip(&members) {
                sum.add_scaled(g, 1.0);
                for a in alphas.iter() {
                    report.record(a);
                    if step == 0 && *is_recent {
                        report.first_step_recent_alphas.push(a);
                    }
                }
            }
            sum.scale(1.0 / members.len() as f64);
            apply_step(&mut theta, &mut velocity, sum, cfg.lr_at(step, total), cfg.momentum, step)?;
            step += 1;
        }
    }
    report.steps = step;
    Ok((theta, report))
}

impl LabeledExample {
    /// Supervised target from the first reference; `None` if it has no token span.
    pub fn from_annotated(ex: &AnnotatedExample) -> Option<Self> {
        let gold = match ex.references.first()? {
            Reference::Unanswerable => None,
            Reference::Answer { span: Some(s), .. } => Some(*s),
            Reference::Answer { span: None, .. } => return None,
        };
        Some(LabeledExample { question: ex.question.clone(), context: ex.context.clone(), gold })
    }
}

/// Supervised initialization by mini-batch gradient descent on the summed
/// cross-entropy. Returns the trained parameters and the mean loss of each epoch.
pub fn train_initial(
    params: &PolicyParams,
    labeled: &[LabeledExample],
    cfg: &TrainerConfig,
) -> Result<(PolicyParams, Vec<f64>)> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::Input("no labeled examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = params.clone();
    let mut velocity = None;
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let total = labeled.len().div_ceil(cfg.batch_size) * cfg.epochs;
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let results = chunk
                .par_iter()
                .map(|&i| theta.supervised_loss_and_grad(&labeled[i], cfg.lambda))
                .collect::<Result<Vec<_>>>()?;
            let mut sum = ParamGradient::zeros(&theta.dims);
            for (loss, g) in &results {
                epoch_loss += loss;
                sum.add_scaled(g, 1.0);
            }
            sum.scale(-1.0 / chunk.len() as f64);
            apply_step(&mut theta, &mut velocity, sum, cfg.lr_at(step, total), cfg.momentum, step)?;
            step += 1;
        }
        epoch_losses.push(epoch_loss / labeled.len() as f64);
    }
    Ok((theta, epoch_losses))
}

/// Fresh policy trained on the first reference of each example.
///
/// Parameters are drawn with `cfg.seed + 1` so that the initial weights and
/// the batch order use different streams. Examples whose first reference
/// has no token span are skipped.
pub fn initialize(
    examples: &[AnnotatedExample],
    dims: PolicyDims,
    mode: PolicyMode,
    cfg: &TrainerConfig,
) -> Result<(PolicyParams, Vec<f64>)> {
    dims.validate()?;
    let labeled: Vec<LabeledExample> = examples.iter().filter_map(LabeledExample::from_annotated).collect();
    let p0 = PolicyParams::random(dims, mode, cfg.seed.wrapping_add(1), DEFAULT_EMBED_SCALE);
    train_initial(&p0, &labeled, cfg)
}
