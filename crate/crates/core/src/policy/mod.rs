//! Compact extractive-QA policy.
//!
//! The policy produces a binary answerability distribution `P_u` and
//! independent start/end distributions whose product is the span distribution
//! `P_s(i, j) = p_start[i] * p_end[j]`. All gradients are computed analytically
//! by a single backward pass parameterised by the upstream derivatives of the
//! three logit groups (start logits, end logits, answerability logit).

mod params;

pub use params::{hash_token, ParamGradient, PolicyDims, PolicyMode, PolicyParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Answerability, Context, Question, Span};

/// Probabilities are floored at this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default cap on predicted answer length, in tokens.
pub const DEFAULT_MAX_ANSWER_LEN: usize = 30;
/// Standard deviation of freshly initialized embeddings.
pub const DEFAULT_EMBED_SCALE: f64 = 0.5;

pub(crate) fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Output distributions of one forward pass.
///
/// `p_start`/`p_end` are indexed by position: in `TwoHead` mode index `k` is
/// token `k + 1`; in `SpanOnly` mode index 0 is the unanswerable sentinel and
/// index `k` is token `k`. Use [`PolicyDistributions::start`] and
/// [`PolicyDistributions::end`] to address by 1-based token position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDistributions {
    pub mode: PolicyMode,
    pub p_unans: f64,
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
}

impl PolicyDistributions {
    fn index(&self, pos: usize) -> usize {
        match self.mode {
            PolicyMode::TwoHead => pos - 1,
            PolicyMode::SpanOnly => pos,
        }
    }

    /// Number of context tokens.
    pub fn n(&self) -> usize {
        match self.mode {
            PolicyMode::TwoHead => self.p_start.len(),
            PolicyMode::SpanOnly => self.p_start.len() - 1,
        }
    }

    /// Start probability at a 1-based token position (0 = sentinel in span-only mode).
    pub fn start(&self, pos: usize) -> f64 {
        self.p_start[self.index(pos)]
    }

    pub fn end(&self, pos: usize) -> f64 {
        self.p_end[self.index(pos)]
    }

    pub fn span_prob(&self, span: Span) -> f64 {
        self.start(span.start) * self.end(span.end)
    }

    pub fn sentinel_prob(&self) -> Option<f64> {
        match self.mode {
            PolicyMode::SpanOnly => Some(self.p_start[0] * self.p_end[0]),
            PolicyMode::TwoHead => None,
        }
    }

    pub fn answer_prob(&self, u: Answerability) -> f64 {
        match u {
            Answerability::Unans => self.p_unans,
            Answerability::Ans => 1.0 - self.p_unans,
        }
    }
}

/// Logged probabilities of the actions taken in one episode.
///
/// Two-head episodes always log the answerability action, and the span action
/// only when it was taken. Span-only episodes log a single span action (the
/// sentinel when unanswerable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Propensities {
    pub answerability: Option<f64>,
    pub span: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answerable: Answerability,
    pub span: Option<Span>,
    pub propensities: Propensities,
}

/// Log-probabilities of the taken actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionLogProbs {
    pub answerability: Option<f64>,
    pub span: Option<f64>,
}

/// Gradients of each action's log-probability.
#[derive(Debug, Clone)]
pub struct ActionGradients {
    pub answerability: Option<ParamGradient>,
    pub span: Option<ParamGradient>,
}

/// Supervised training target: `None` means the gold answer is "unanswerable".
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub question: Question,
    pub context: Context,
    pub gold: Option<Span>,
}

/// Intermediate values of a forward pass, retained for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    q_ids: Vec<usize>,
    c_ids: Vec<usize>,
    qvec: Vec<f64>,
    /// `n x hidden_dim`, post-tanh.
    hidden: Vec<f64>,
    pool: Vec<f64>,
    answer_logit: f64,
    pub dists: PolicyDistributions,
}

impl Trace {
    pub fn answer_logit(&self) -> f64 {
        self.answer_logit
    }
}

/// Upstream derivatives of a scalar objective with respect to the logits.
#[derive(Debug, Clone)]
pub(crate) struct Upstream {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub answer: f64,
}

impl Upstream {
    pub fn zeros(len: usize) -> Self {
        Upstream { start: vec![0.0; len], end: vec![0.0; len], answer: 0.0 }
    }

    pub fn add_scaled(&mut self, other: &Upstream, c: f64) {
        params::axpy(&mut self.start, &other.start, c);
        params::axpy(&mut self.end, &other.end, c);
        self.answer += c * other.answer;
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PolicyParams {
    /// Forward pass, keeping intermediates for gradients.
    pub fn trace(&self, q: &Question, c: &Context) -> Result<Trace> {
        let dims = self.dims;
        let n = c.len();
        if n == 0 {
            return Err(Error::Input("empty context".into()));
        }
        if n > dims.max_context_len {
            return Err(Error::Input(format!(
                "context has {n} tokens, maximum is {}",
                dims.max_context_len
            )));
        }
        let q_tokens = q.model_tokens();
        if q_tokens.is_empty() {
            return Err(Error::Input("empty question".into()));
        }
        let q_ids: Vec<usize> = q_tokens.iter().map(|t| hash_token(t, dims.vocab_size)).collect();
        let c_ids: Vec<usize> = c.tokens.iter().map(|t| hash_token(t, dims.vocab_size)).collect();
        let rows: Vec<usize> = q_ids.iter().chain(&c_ids).copied().collect();
        self.check_finite_rows(&rows)?;

        let d = dims.embed_dim;
        let h = dims.hidden_dim;
        let f = dims.feature_dim();

        let mut qvec = vec![0.0; d];
        for &id in &q_ids {
            params::axpy(&mut qvec, self.embedding_row(id), 1.0);
        }
        let inv_m = 1.0 / q_ids.len() as f64;
        qvec.iter_mut().for_each(|x| *x *= inv_m);

        let mut hidden = vec![0.0; n * h];
        let mut x = vec![0.0; f];
        x[d..2 * d].copy_from_slice(&qvec);
        for (t, &id) in c_ids.iter().enumerate() {
            let e = self.embedding_row(id);
            x[..d].copy_from_slice(e);
            for k in 0..d {
                x[2 * d + k] = e[k] * qvec[k];
            }
            let out = &mut hidden[t * h..(t + 1) * h];
            for (u, o) in out.iter_mut().enumerate() {
                let a = self.hidden_b[u] + dot(&self.hidden_w[u * f..(u + 1) * f], &x);
                *o = a.tanh();
            }
        }

        let mut pool = vec![0.0; h];
        for t in 0..n {
            params::axpy(&mut pool, &hidden[t * h..(t + 1) * h], 1.0);
        }
        let inv_n = 1.0 / n as f64;
        pool.iter_mut().for_each(|x| *x *= inv_n);

        let sentinel = usize::from(self.mode == PolicyMode::SpanOnly);
        let mut start_logits = Vec::with_capacity(n + sentinel);
        let mut end_logits = Vec::with_capacity(n + sentinel);
        if sentinel == 1 {
            start_logits.push(dot(&self.start_w, &pool) + self.start_b);
            end_logits.push(dot(&self.end_w, &pool) + self.end_b);
        }
        for t in 0..n {
            let ht = &hidden[t * h..(t + 1) * h];
            start_logits.push(dot(&self.start_w, ht) + self.start_b);
            end_logits.push(dot(&self.end_w, ht) + self.end_b);
        }
        let p_start = softmax(&start_logits);
        let p_end = softmax(&end_logits);

        let (answer_logit, p_unans) = match self.mode {
            PolicyMode::TwoHead => {
                let z = dot(&self.answer_w, &pool) + self.answer_b;
                (z, sigmoid(z))
            }
            PolicyMode::SpanOnly => (0.0, p_start[0] * p_end[0]),
        };

        Ok(Trace {
            q_ids,
            c_ids,
            qvec,
            hidden,
            pool,
            answer_logit,
            dists: PolicyDistributions { mode: self.mode, p_unans, p_start, p_end },
        })
    }

    pub fn forward(&self, q: &Question, c: &Context) -> Result<PolicyDistributions> {
        Ok(self.trace(q, c)?.dists)
    }

    /// Greedy prediction with a maximum answer length.
    pub fn predict(&self, q: &Question, c: &Context, max_answer_len: usize) -> Result<Prediction> {
        let dists = self.forward(q, c)?;
        decode(&dists, max_answer_len)
    }

    pub fn log_prob_actions(
        &self,
        q: &Question,
        c: &Context,
        u: Answerability,
        span: Option<Span>,
    ) -> Result<ActionLogProbs> {
        let dists = self.forward(q, c)?;
        log_probs_from(&dists, u, span)
    }

    /// Gradients of `log P_u(u)` and `log P_s(span)` with respect to all parameters.
    pub fn grad_log_prob(
        &self,
        q: &Question,
        c: &Context,
        u: Answerability,
        span: Option<Span>,
    ) -> Result<ActionGradients> {
        let trace = self.trace(q, c)?;
        check_actions(&trace.dists, u, span)?;
        let answerability = match self.mode {
            PolicyMode::TwoHead => Some(self.backward(&trace, &upstream_log_pu(&trace, u))),
            PolicyMode::SpanOnly => None,
        };
        let span_grad = match (self.mode, u) {
            (PolicyMode::TwoHead, Answerability::Unans) => None,
            _ => Some(self.backward(&trace, &upstream_log_ps(&trace, span))),
        };
        Ok(ActionGradients { answerability, span: span_grad })
    }

    /// Binary entropy of `P_u` and its gradient.
    pub fn entropy_and_grad(&self, q: &Question, c: &Context) -> Result<(f64, ParamGradient)> {
        if self.mode != PolicyMode::TwoHead {
            return Err(Error::UnsupportedMode { required: "TWO_HEAD" });
        }
        let trace = self.trace(q, c)?;
        let h = binary_entropy(trace.dists.p_unans);
        let grad = self.backward(&trace, &upstream_entropy(&trace));
        Ok((h, grad))
    }

    /// Summed cross-entropy `CE(start) + CE(end) + lambda * CE(answerability)` and its gradient.
    ///
    /// Unanswerable gold supervises only the answerability term in two-head
    /// mode; in span-only mode it targets the sentinel pair.
    pub fn supervised_loss_and_grad(&self, ex: &LabeledExample, lambda: f64) -> Result<(f64, ParamGradient)> {
        if !(lambda >= 0.0) {
            return Err(Error::Input(format!("lambda must be non-negative, got {lambda}")));
        }
        if let Some(s) = ex.gold {
            s.check(ex.context.len())?;
        }
        let trace = self.trace(&ex.question, &ex.context)?;
        let (loss, up) = supervised_upstream(&trace, ex.gold, lambda);
        Ok((loss, self.backward(&trace, &up)))
    }

    /// Backpropagate logit-level derivatives to every parameter.
    pub(crate) fn backward(&self, trace: &Trace, up: &Upstream) -> ParamGradient {
        let dims = self.dims;
        let d = dims.embed_dim;
        let h = dims.hidden_dim;
        let f = dims.feature_dim();
        let n = trace.c_ids.len();
        let off = usize::from(self.mode == PolicyMode::SpanOnly);
        let mut g = ParamGradient::zeros(&dims);

        let mut dpool = vec![0.0; h];
        if self.mode == PolicyMode::TwoHead && up.answer != 0.0 {
            params::axpy(&mut dpool, &self.answer_w, up.answer);
            params::axpy(&mut g.answer_w, &trace.pool, up.answer);
            g.answer_b = up.answer;
        }
        if off == 1 {
            let (ds, de) = (up.start[0], up.end[0]);
            params::axpy(&mut dpool, &self.start_w, ds);
            params::axpy(&mut dpool, &self.end_w, de);
            params::axpy(&mut g.start_w, &trace.pool, ds);
            params::axpy(&mut g.end_w, &trace.pool, de);
            g.start_b += ds;
            g.end_b += de;
        }
        let inv_n = 1.0 / n as f64;
        dpool.iter_mut().for_each(|x| *x *= inv_n);
        let pool_active = dpool.iter().any(|&x| x != 0.0);

        let qvec = &trace.qvec;
        let mut dq = vec![0.0; d];
        let mut dh = vec![0.0; h];
        let mut da = vec![0.0; h];
        let mut x = vec![0.0; f];
        let mut dx = vec![0.0; f];
        x[d..2 * d].copy_from_slice(qvec);
        for (t, &id) in trace.c_ids.iter().enumerate() {
            let ds = up.start[t + off];
            let de = up.end[t + off];
            if ds == 0.0 && de == 0.0 && !pool_active {
                continue;
            }
            let ht = &trace.hidden[t * h..(t + 1) * h];
            params::axpy(&mut g.start_w, ht, ds);
            params::axpy(&mut g.end_w, ht, de);
            g.start_b += ds;
            g.end_b += de;

            for u in 0..h {
                dh[u] = ds * self.start_w[u] + de * self.end_w[u] + dpool[u];
                da[u] = dh[u] * (1.0 - ht[u] * ht[u]);
            }
            let e = self.embedding_row(id);
            x[..d].copy_from_slice(e);
            for k in 0..d {
                x[2 * d + k] = e[k] * qvec[k];
            }
            dx.iter_mut().for_each(|v| *v = 0.0);
            for u in 0..h {
                let a = da[u];
                if a == 0.0 {
                    continue;
                }
                g.hidden_b[u] += a;
                let row = &self.hidden_w[u * f..(u + 1) * f];
                params::axpy(&mut g.hidden_w[u * f..(u + 1) * f], &x, a);
                params::axpy(&mut dx, row, a);
            }
            let de_row = g.embedding_row_mut(id);
            for k in 0..d {
                de_row[k] += dx[k] + dx[2 * d + k] * qvec[k];
                dq[k] += dx[d + k] + dx[2 * d + k] * e[k];
            }
        }
        let inv_m = 1.0 / trace.q_ids.len() as f64;
        if dq.iter().any(|&v| v != 0.0) {
            for &id in &trace.q_ids {
                params::axpy(g.embedding_row_mut(id), &dq, inv_m);
            }
        }
        g
    }
}

/// Greedy decoding. Ties go to the lexicographically smallest `(i, j)`;
/// `p_unans == 0.5` decodes as answerable.
pub fn decode(dists: &PolicyDistributions, max_answer_len: usize) -> Result<Prediction> {
    if max_answer_len == 0 {
        return Err(Error::Input("max answer length must be positive".into()));
    }
    let n = dists.n();
    let mut best: Option<(Span, f64)> = None;
    for i in 1..=n {
        let ps = dists.start(i);
        for j in i..=n.min(i + max_answer_len - 1) {
            let p = ps * dists.end(j);
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((Span::new(i, j), p));
            }
        }
    }
    let (span, p_span) = best.ok_or_else(|| Error::Internal("no valid span".into()))?;
    let floor = f64::MIN_POSITIVE;
    Ok(match dists.mode {
        PolicyMode::TwoHead => {
            if dists.p_unans > 0.5 {
                Prediction {
                    answerable: Answerability::Unans,
                    span: None,
                    propensities: Propensities { answerability: Some(dists.p_unans.max(floor)), span: None },
                }
            } else {
                Prediction {
                    answerable: Answerability::Ans,
                    span: Some(span),
                    propensities: Propensities {
                        answerability: Some((1.0 - dists.p_unans).max(floor)),
                        span: Some(p_span.max(floor)),
                    },
                }
            }
        }
        PolicyMode::SpanOnly => {
            let p_null = dists.p_start[0] * dists.p_end[0];
            if p_null >= p_span {
                Prediction {
                    answerable: Answerability::Unans,
                    span: None,
                    propensities: Propensities { answerability: None, span: Some(p_null.max(floor)) },
                }
            } else {
                Prediction {
                    answerable: Answerability::Ans,
                    span: Some(span),
                    propensities: Propensities { answerability: None, span: Some(p_span.max(floor)) },
                }
            }
        }
    })
}

fn check_actions(dists: &PolicyDistributions, u: Answerability, span: Option<Span>) -> Result<()> {
    match (u, span) {
        (Answerability::Ans, Some(s)) => s.check(dists.n()),
        (Answerability::Ans, None) => Err(Error::Input("answerable action requires a span".into())),
        (Answerability::Unans, Some(_)) => Err(Error::Input("unanswerable action cannot carry a span".into())),
        (Answerability::Unans, None) => Ok(()),
    }
}

pub(crate) fn log_probs_from(
    dists: &PolicyDistributions,
    u: Answerability,
    span: Option<Span>,
) -> Result<ActionLogProbs> {
    check_actions(dists, u, span)?;
    Ok(match dists.mode {
        PolicyMode::TwoHead => ActionLogProbs {
            answerability: Some(floored_ln(dists.answer_prob(u))),
            span: span.map(|s| floored_ln(dists.start(s.start)) + floored_ln(dists.end(s.end))),
        },
        PolicyMode::SpanOnly => {
            let (i, j) = span.map_or((0, 0), |s| (s.start, s.end));
            ActionLogProbs {
                answerability: None,
                span: Some(floored_ln(dists.start(i)) + floored_ln(dists.end(j))),
            }
        }
    })
}

pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// d log P_u(u) / d logit, zero where the probability sits below the floor.
pub(crate) fn upstream_log_pu(trace: &Trace, u: Answerability) -> Upstream {
    let dists = &trace.dists;
    let mut up = Upstream::zeros(dists.p_start.len());
    let p = dists.p_unans;
    if dists.answer_prob(u) >= PROB_FLOOR {
        up.answer = match u {
            Answerability::Unans => 1.0 - p,
            Answerability::Ans => -p,
        };
    }
    up
}

/// d log P_s(span) / d logits. `None` addresses the sentinel pair (span-only mode).
pub(crate) fn upstream_log_ps(trace: &Trace, span: Option<Span>) -> Upstream {
    let dists = &trace.dists;
    let mut up = Upstream::zeros(dists.p_start.len());
    let (i, j) = match span {
        Some(s) => (dists.index(s.start), dists.index(s.end)),
        None => (0, 0),
    };
    if dists.p_start[i] >= PROB_FLOOR {
        up.start.iter_mut().zip(&dists.p_start).for_each(|(g, p)| *g = -p);
        up.start[i] += 1.0;
    }
    if dists.p_end[j] >= PROB_FLOOR {
        up.end.iter_mut().zip(&dists.p_end).for_each(|(g, p)| *g = -p);
        up.end[j] += 1.0;
    }
    up
}

/// dH/dz for the binary entropy of sigmoid(z): `-z * p * (1 - p)`.
pub(crate) fn upstream_entropy(trace: &Trace) -> Upstream {
    let dists = &trace.dists;
    let mut up = Upstream::zeros(dists.p_start.len());
    let p = dists.p_unans;
    up.answer = -trace.answer_logit * p * (1.0 - p);
    up
}

fn supervised_upstream(trace: &Trace, gold: Option<Span>, lambda: f64) -> (f64, Upstream) {
    let dists = &trace.dists;
    let mut up = Upstream::zeros(dists.p_start.len());
    let mut loss = 0.0;
    match dists.mode {
        PolicyMode::TwoHead => {
            let u = if gold.is_some() { Answerability::Ans } else { Answerability::Unans };
            loss -= lambda * floored_ln(dists.answer_prob(u));
            up.add_scaled(&upstream_log_pu(trace, u), -lambda);
            if let Some(s) = gold {
                loss -= floored_ln(dists.start(s.start)) + floored_ln(dists.end(s.end));
                up.add_scaled(&upstream_log_ps(trace, Some(s)), -1.0);
            }
        }
        PolicyMode::SpanOnly => {
            let (i, j) = gold.map_or((0, 0), |s| (s.start, s.end));
            loss -= floored_ln(dists.start(i)) + floored_ln(dists.end(j));
            up.add_scaled(&upstream_log_ps(trace, gold), -1.0);
        }
    }
    (loss, up)
}

#[cfg(test)]
mod tests;
