//! Answer normalization, multi-reference token F1, and model/deployment metrics.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rewards::RewardTable;
use crate::trainer::Interaction;
use crate::types::{AnnotatedExample, Answerability, Feedback, Reference};

/// A system answer as text, or the unanswerable verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    Unanswerable,
    Text(String),
}

/// Lowercase, strip ASCII punctuation, drop articles, split on whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

/// Bag-of-tokens F1 between two normalized answers.
pub fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred == gold { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0i64;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Gold answerability by majority vote, with the answerable references kept for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Consolidated<'a> {
    pub answerable: bool,
    pub answers: Vec<&'a str>,
}

/// Majority vote over references; a tie counts as answerable.
pub fn consolidate(refs: &[Reference]) -> Consolidated<'_> {
    let answers: Vec<&str> = refs
        .iter()
        .filter_map(|r| match r {
            Reference::Answer { text, .. } => Some(text.as_str()),
            Reference::Unanswerable => None,
        })
        .collect();
    let unans = refs.len() - answers.len();
    Consolidated { answerable: answers.len() >= unans, answers }
}

/// Token F1 in `[0, 1]` of a prediction against up to three references.
pub fn token_f1(pred: &Answer, refs: &[Reference]) -> f64 {
    let gold = consolidate(refs);
    match (gold.answerable, pred) {
        (false, Answer::Unanswerable) => 1.0,
        (false, Answer::Text(_)) | (true, Answer::Unanswerable) => 0.0,
        (true, Answer::Text(text)) => {
            let p = normalize_answer(text);
            gold.answers
                .iter()
                .map(|g| f1_tokens(&p, &normalize_answer(g)))
                .fold(0.0, f64::max)
        }
    }
}

/// Evaluation metrics on the 0-100 scale. Subset scores are `None` when the subset is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub n_ans: usize,
    pub n_unans: usize,
    pub f1: f64,
    pub ans_f1: Option<f64>,
    pub unans_f1: Option<f64>,
    pub cls_accuracy: f64,
    pub pct_pred_unans: f64,
    /// Subsets conditioned on the predicted, rather than gold, answerability.
    pub n_pred_ans: usize,
    pub n_pred_unans: usize,
    pub pred_ans_f1: Option<f64>,
    pub pred_unans_f1: Option<f64>,
}

impl Metrics {
    pub const CSV_HEADER: [&'static str; 12] = [
        "n",
        "n_ans",
        "n_unans",
        "f1",
        "ans_f1",
        "unans_f1",
        "cls_accuracy",
        "pct_pred_unans",
        "n_pred_ans",
        "n_pred_unans",
        "pred_ans_f1",
        "pred_unans_f1",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
        vec![
            self.n.to_string(),
            self.n_ans.to_string(),
            self.n_unans.to_string(),
            format!("{:.4}", self.f1),
            opt(self.ans_f1),
            opt(self.unans_f1),
            format!("{:.4}", self.cls_accuracy),
            format!("{:.4}", self.pct_pred_unans),
            self.n_pred_ans.to_string(),
            self.n_pred_unans.to_string(),
            opt(self.pred_ans_f1),
            opt(self.pred_unans_f1),
        ]
    }
}

/// Per-example outcome used to assemble [`Metrics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredExample {
    pub f1: f64,
    pub gold_answerable: bool,
    pub pred_answerable: bool,
}

pub fn score_example(params: &PolicyParams, ex: &AnnotatedExample, max_answer_len: usize) -> Result<ScoredExample> {
    let pred = params.predict(&ex.question, &ex.context, max_answer_len)?;
    let answer = match pred.span {
        Some(span) => Answer::Text(ex.context.span_text(span)?),
        None => Answer::Unanswerable,
    };
    Ok(ScoredExample {
        f1: token_f1(&answer, &ex.references),
        gold_answerable: consolidate(&ex.references).answerable,
        pred_answerable: pred.answerable == Answerability::Ans,
    })
}

/// Aggregate per-example scores. Order-independent up to floating-point summation order.
pub fn aggregate(scores: &[ScoredExample]) -> Result<Metrics> {
    if scores.is_empty() {
        return Err(Error::Input("cannot evaluate an empty test set".into()));
    }
    let mean = |pred: &dyn Fn(&ScoredExample) -> bool| -> (usize, Option<f64>) {
        let subset: Vec<f64> = scores.iter().filter(|s| pred(s)).map(|s| s.f1).collect();
        let n = subset.len();
        (n, (n > 0).then(|| 100.0 * subset.iter().sum::<f64>() / n as f64))
    };
    let n = scores.len();
    let (n_ans, ans_f1) = mean(&|s| s.gold_answerable);
    let (n_unans, unans_f1) = mean(&|s| !s.gold_answerable);
    let (n_pred_ans, pred_ans_f1) = mean(&|s| s.pred_answerable);
    let (n_pred_unans, pred_unans_f1) = mean(&|s| !s.pred_answerable);
    let agree = scores.iter().filter(|s| s.gold_answerable == s.pred_answerable).count();
    Ok(Metrics {
        n,
        n_ans,
        n_unans,
        f1: 100.0 * scores.iter().map(|s| s.f1).sum::<f64>() / n as f64,
        ans_f1,
        unans_f1,
        cls_accuracy: 100.0 * agree as f64 / n as f64,
        pct_pred_unans: 100.0 * n_pred_unans as f64 / n as f64,
        n_pred_ans,
        n_pred_unans,
        pred_ans_f1,
        pred_unans_f1,
    })
}

/// Predict every test example and score it.
pub fn evaluate(params: &PolicyParams, test: &[AnnotatedExample], max_answer_len: usize) -> Result<Metrics> {
    let scores = test
        .par_iter()
        .map(|ex| score_example(params, ex, max_answer_len))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&scores)
}

/// Per-round deployment statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentStats {
    pub interactions: usize,
    pub frac_correct: f64,
    pub frac_partial: f64,
    pub frac_wrong: f64,
    pub mean_reward: f64,
    pub mean_r1: f64,
    /// Mean span reward over episodes that returned a span.
    pub mean_r2: Option<f64>,
    pub frac_pred_unans: f64,
}

pub fn deployment_stats(interactions: &[Interaction], rewards: &RewardTable) -> Result<DeploymentStats> {
    if interactions.is_empty() {
        return Err(Error::Input("no interactions to summarize".into()));
    }
    let n = interactions.len() as f64;
    let frac = |f: Feedback| interactions.iter().filter(|x| x.feedback == f).count() as f64 / n;
    let assigned: Vec<_> = interactions.iter().map(|x| x.rewards(rewards)).collect();
    let r2: Vec<f64> = assigned.iter().filter_map(|r| r.r2).collect();
    Ok(DeploymentStats {
        interactions: interactions.len(),
        frac_correct: frac(Feedback::Correct),
        frac_partial: frac(Feedback::PartiallyCorrect),
        frac_wrong: frac(Feedback::Wrong),
        mean_reward: assigned.iter().map(|r| r.total()).sum::<f64>() / n,
        mean_r1: assigned.iter().map(|r| r.r1).sum::<f64>() / n,
        mean_r2: (!r2.is_empty()).then(|| r2.iter().sum::<f64>() / r2.len() as f64),
        frac_pred_unans: interactions.iter().filter(|x| x.answerable == Answerability::Unans).count() as f64 / n,
    })
}
