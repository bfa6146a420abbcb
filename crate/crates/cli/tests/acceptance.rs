//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test -p banditqa-cli --test acceptance`.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use banditqa_core::checkpoint::load_checkpoint;
use banditqa_core::datastore::{load_squad2, load_topic_pool, JsonlLog};
use banditqa_core::eval::{Answer, Metrics};
use banditqa_core::policy::{LabeledExample, ParamGradient, DEFAULT_MAX_ANSWER_LEN};
use banditqa_core::simulator::SensitivityReport;
use banditqa_core::trainer::{bandit_update_direction, direction_with_alphas};
use banditqa_core::types::DEFAULT_MAX_CONTEXT_LEN;
use banditqa_core::{
    initialize, map_feedback, map_feedback_span_only, resample_sensitivity, run_deployment, token_f1,
    AnnotatedExample, Answerability, Context, DeploymentConfig, ExperimentLog, Feedback, Interaction, PolicyDims,
    PolicyMode, PolicyParams, Prediction, Propensities, Question, Reference, Span, TrainerConfig, Variant,
};
use banditqa_service::{serve, DeployedSnapshot, LoggedInteraction, Service, ServiceConfig};

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn load(name: &str) -> Vec<AnnotatedExample> {
    load_squad2(data(name), DEFAULT_MAX_CONTEXT_LEN).unwrap().examples
}

// ---------------------------------------------------------------------------
// Reward table

fn reward_table() -> Check {
    use Answerability::*;
    use Feedback::*;
    let cells = [
        (Unans, Correct, 1.0, None),
        (Unans, PartiallyCorrect, 0.0, None),
        (Unans, Wrong, -1.0, None),
        (Ans, Correct, 1.0, Some(1.0)),
        (Ans, PartiallyCorrect, 1.0, Some(0.5)),
        (Ans, Wrong, 0.0, Some(-0.1)),
    ];
    for (u, f, r1, r2) in cells {
        let got = map_feedback(u, f);
        ensure!(got.r1 == r1 && got.r2 == r2, "{u:?}/{f:?}: got {got:?}, want ({r1}, {r2:?})");
    }
    for (f, r) in [(Correct, 1.0), (PartiallyCorrect, 0.5), (Wrong, -0.1)] {
        let got = map_feedback_span_only(f);
        ensure!(got == r, "span-only {f:?}: got {got}, want {r}");
    }
    Ok("6 two-head cells and 3 span-only values exact".into())
}

// ---------------------------------------------------------------------------
// Finite differences

const WORDS: &[&str] = &[
    "alice", "was", "born", "in", "paris", "she", "studied", "music", "at", "the", "academy", "and", "later",
    "moved", "to", "berlin", "where", "worked", "as", "a", "painter", "1912", "river", "north",
];

fn sentence(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn fd_dims() -> PolicyDims {
    PolicyDims { vocab_size: 48, embed_dim: 4, hidden_dim: 3, max_context_len: 490 }
}

struct Instance {
    params: PolicyParams,
    q: Question,
    c: Context,
    span: Span,
}

fn instance(seed: u64, mode: PolicyMode) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = PolicyParams::random(fd_dims(), mode, seed, 0.5);
    let q = Question::new(&sentence(&mut rng, 3, 6)).unwrap();
    let c = Context::new(&sentence(&mut rng, 4, 12)).unwrap();
    let start = rng.random_range(1..=c.len());
    let end = rng.random_range(start..=c.len().min(start + 3));
    Instance { params, q, c, span: Span::new(start, end) }
}

/// Worst relative error of `grad` against central differences of `f` over every parameter.
fn fd_error(params: &PolicyParams, grad: &ParamGradient, f: impl Fn(&PolicyParams) -> f64) -> f64 {
    let h = 1e-5;
    let mut p = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.flat_len() {
        let x = params.flat_get(i);
        p.flat_set(i, x + h);
        let up = f(&p);
        p.flat_set(i, x - h);
        let down = f(&p);
        p.flat_set(i, x);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad.flat_get(params, i);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

fn gradients() -> Check {
    let t0 = Instant::now();
    let mut worst: HashMap<&str, (f64, usize)> = HashMap::new();
    let mut note = |name, e: f64| {
        let w = worst.entry(name).or_insert((0.0, 0));
        w.0 = w.0.max(e);
        w.1 += 1;
    };
    for seed in 0..12u64 {
        let Instance { params, q, c, span } = instance(seed, PolicyMode::TwoHead);
        for (u, s) in [(Answerability::Ans, Some(span)), (Answerability::Unans, None)] {
            let g = params.grad_log_prob(&q, &c, u, s).unwrap().answerability.unwrap();
            note(
                "log P_u",
                fd_error(&params, &g, |p| p.log_prob_actions(&q, &c, u, s).unwrap().answerability.unwrap()),
            );
        }
        let g = params.grad_log_prob(&q, &c, Answerability::Ans, Some(span)).unwrap().span.unwrap();
        note(
            "log P_s",
            fd_error(&params, &g, |p| p.log_prob_actions(&q, &c, Answerability::Ans, Some(span)).unwrap().span.unwrap()),
        );
        let (_, g) = params.entropy_and_grad(&q, &c).unwrap();
        note("H", fd_error(&params, &g, |p| p.entropy_and_grad(&q, &c).unwrap().0));
        for gold in [Some(span), None] {
            let ex = LabeledExample { question: q.clone(), context: c.clone(), gold };
            let lambda = 0.5 + seed as f64 * 0.25;
            let (_, g) = params.supervised_loss_and_grad(&ex, lambda).unwrap();
            note("supervised", fd_error(&params, &g, |p| p.supervised_loss_and_grad(&ex, lambda).unwrap().0));
        }
    }
    for seed in 100..110u64 {
        let Instance { params, q, c, span } = instance(seed, PolicyMode::SpanOnly);
        let g = params.grad_log_prob(&q, &c, Answerability::Ans, Some(span)).unwrap().span.unwrap();
        note(
            "log P_s",
            fd_error(&params, &g, |p| p.log_prob_actions(&q, &c, Answerability::Ans, Some(span)).unwrap().span.unwrap()),
        );
        let ex = LabeledExample { question: q.clone(), context: c.clone(), gold: Some(span) };
        let (_, g) = params.supervised_loss_and_grad(&ex, 1.0).unwrap();
        note("supervised", fd_error(&params, &g, |p| p.supervised_loss_and_grad(&ex, 1.0).unwrap().0));
    }
    let elapsed = t0.elapsed();
    let mut parts = Vec::new();
    for name in ["log P_u", "log P_s", "H", "supervised"] {
        let (w, n) = worst[name];
        ensure!(n >= 10, "{name}: only {n} instances");
        ensure!(w < 1e-4, "{name}: relative error {w:.2e} over {n} instances");
        parts.push(format!("{name} {w:.1e} (n={n})"));
    }
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:.1?}");
    Ok(format!("{} in {elapsed:.1?}", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// Omission semantics

fn omission() -> Check {
    let no_entropy = TrainerConfig { entropy_coeff: 0.0, ..TrainerConfig::bandit() };
    let mut n = 0;
    for seed in 0..50u64 {
        let Instance { params, q, c, span } = instance(seed, PolicyMode::TwoHead);
        let dists = params.forward(&q, &c).unwrap();
        let f = Feedback::ALL[seed as usize % 3];
        let unans = Prediction {
            answerable: Answerability::Unans,
            span: None,
            propensities: Propensities { answerability: Some(dists.answer_prob(Answerability::Unans)), span: None },
        };
        let x = Interaction::from_prediction(q.clone(), c.clone(), &unans, f, 1);
        for cfg in [TrainerConfig::bandit(), no_entropy.clone()] {
            let g = bandit_update_direction(&params, &x, &cfg).unwrap();
            ensure!(g.span_head_max_abs() == 0.0, "UNANS/{f:?} moved the span heads by {:e}", g.span_head_max_abs());
        }
        let wrong = Prediction {
            answerable: Answerability::Ans,
            span: Some(span),
            propensities: Propensities {
                answerability: Some(dists.answer_prob(Answerability::Ans)),
                span: Some(dists.span_prob(span)),
            },
        };
        let x = Interaction::from_prediction(q, c, &wrong, Feedback::Wrong, 1);
        let g = bandit_update_direction(&params, &x, &no_entropy).unwrap();
        ensure!(g.answer_head_max_abs() == 0.0, "ANS+WRONG moved the answerability head by {:e}", g.answer_head_max_abs());
        ensure!(g.span_head_max_abs() > 0.0, "ANS+WRONG left the span heads untouched");
        n += 1;
    }
    Ok(format!("{n} UNANS and {n} ANS+WRONG interactions, exact zeros"))
}

// ---------------------------------------------------------------------------
// token_f1 against a brute-force scorer

fn brute_normalize(text: &str) -> Vec<String> {
    let mut kept = String::new();
    for ch in text.chars() {
        for l in ch.to_lowercase() {
            if !"!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~".contains(l) {
                kept.push(l);
            }
        }
    }
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in kept.chars().chain(std::iter::once(' ')) {
        if ch.is_whitespace() {
            if !cur.is_empty() && cur != "a" && cur != "an" && cur != "the" {
                out.push(cur.clone());
            }
            cur.clear();
        } else {
            cur.push(ch);
        }
    }
    out
}

/// Overlap by pairing each predicted token with an unused equal gold token.
fn brute_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.len() == gold.len() { 1.0 } else { 0.0 };
    }
    let mut used = vec![false; gold.len()];
    let mut common = 0usize;
    for p in pred {
        for (j, g) in gold.iter().enumerate() {
            if !used[j] && g == p {
                used[j] = true;
                common += 1;
                break;
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

fn brute_token_f1(pred: &Answer, refs: &[Reference]) -> f64 {
    let n_unans = refs.iter().filter(|r| matches!(r, Reference::Unanswerable)).count();
    let gold_answerable = 2 * n_unans <= refs.len();
    match pred {
        Answer::Unanswerable => (!gold_answerable) as u8 as f64,
        Answer::Text(_) if !gold_answerable => 0.0,
        Answer::Text(t) => {
            let p = brute_normalize(t);
            let mut best = 0.0;
            for r in refs {
                if let Reference::Answer { text, .. } = r {
                    let s = brute_f1(&p, &brute_normalize(text));
                    if s > best {
                        best = s;
                    }
                }
            }
            best
        }
    }
}

const PIECES: &[&str] = &[
    "the", "The", "a", "An", "an", "Paris", "paris", "paris,", "Berlin.", "1912", "(1912)", "music", "Music!",
    "river", "north-east", "o'neil", "x", "y", "y", "Élan", "ÉLAN", "--", "...", "",
];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(0..6);
    let mut s = String::new();
    for _ in 0..n {
        s.push_str(PIECES.choose(rng).unwrap());
        s.push_str([" ", "  ", "\t", " "].choose(rng).unwrap());
    }
    s
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut nonzero = 0;
    for case in 0..1000 {
        let refs: Vec<Reference> = (0..rng.random_range(1..=3))
            .map(|_| {
                if rng.random_bool(0.25) {
                    Reference::Unanswerable
                } else {
                    Reference::text(random_text(&mut rng))
                }
            })
            .collect();
        let pred = if rng.random_bool(0.15) { Answer::Unanswerable } else { Answer::Text(random_text(&mut rng)) };
        let got = token_f1(&pred, &refs);
        let want = brute_token_f1(&pred, &refs);
        ensure!(got.to_bits() == want.to_bits(), "case {case}: {pred:?} vs {refs:?}: {got} != {want}");
        if got > 0.0 && got < 1.0 {
            nonzero += 1;
        }
    }
    Ok(format!("1000 cases bit-identical ({nonzero} with partial overlap)"))
}

// ---------------------------------------------------------------------------
// Deployment runs

struct Runs {
    init: PolicyParams,
    init_secs: f64,
    test: Vec<AnnotatedExample>,
    pool: Vec<AnnotatedExample>,
    long: ExperimentLog,
    long_secs: f64,
}

fn prepare() -> Runs {
    let t0 = Instant::now();
    let init_examples = load("init.json");
    assert_eq!(init_examples.len(), 512);
    let (init, _) =
        initialize(&init_examples, PolicyDims::default(), PolicyMode::TwoHead, &TrainerConfig::supervised()).unwrap();
    let init_secs = t0.elapsed().as_secs_f64();
    let pool = load("pool.json");
    let test = load("test.json");
    let t1 = Instant::now();
    let long = run_deployment(&init, &pool, &test, &DeploymentConfig::long_term(), |_, _| Ok(())).unwrap();
    Runs { init, init_secs, test, pool, long, long_secs: t1.elapsed().as_secs_f64() }
}

fn continual_improvement(r: &Runs) -> Check {
    ensure!(r.test.len() == 300, "test set has {} examples", r.test.len());
    let rounds = &r.long.rounds;
    ensure!(rounds.len() == 9 && rounds.iter().all(|x| x.stats.interactions == 200), "expected 9 rounds of 200");
    let reward_gain = rounds[8].stats.mean_reward - rounds[0].stats.mean_reward;
    let f1_gain = r.long.final_metrics.f1 - rounds[0].metrics.f1;
    let secs = r.init_secs + r.long_secs;
    let detail = format!(
        "reward {:.3} -> {:.3} ({reward_gain:+.3}), F1 {:.1} -> {:.1} ({f1_gain:+.1}), {secs:.0}s",
        rounds[0].stats.mean_reward, rounds[8].stats.mean_reward, rounds[0].metrics.f1, r.long.final_metrics.f1
    );
    ensure!(reward_gain >= 0.15, "reward gain too small: {detail}");
    ensure!(f1_gain >= 5.0, "F1 gain too small: {detail}");
    ensure!(secs < 900.0, "too slow: {detail}");
    Ok(detail)
}

fn ips_identities(r: &Runs) -> Check {
    let clip = DeploymentConfig::long_term().trainer.ips_clip;
    let mut first = 0;
    let mut total = 0;
    for rec in &r.long.rounds {
        let t = &rec.training;
        ensure!(t.first_step_recent_alphas.len() > 0, "round {}: no first-step ratios recorded", rec.round);
        for a in &t.first_step_recent_alphas {
            ensure!((a - 1.0).abs() <= 1e-9, "round {}: first-step ratio {a}", rec.round);
        }
        first += t.first_step_recent_alphas.len();
        let (lo, hi) = (t.alpha_min.unwrap(), t.alpha_max.unwrap());
        ensure!(lo >= 0.0 && hi <= clip, "round {}: ratios span [{lo}, {hi}] with clip {clip}", rec.round);
        total += t.alpha_count;
    }

    // Recompute a sample of ratios independently after the run.
    let theta = r.init.clone();
    let cfg = DeploymentConfig::long_term().trainer;
    for x in r.long.interactions.iter().take(200) {
        let (_, alphas) = direction_with_alphas(&theta, x, &cfg).unwrap();
        for a in alphas.iter() {
            ensure!((a - 1.0).abs() <= 1e-9, "round-1 interaction under the logging policy has ratio {a}");
        }
    }
    Ok(format!("{first} first-step ratios within 1e-9 of 1, {total} ratios <= clip {clip}"))
}

fn rehearsal(r: &Runs) -> Check {
    let cfg = DeploymentConfig {
        rounds: 3,
        interactions_per_round: 200,
        trainer: TrainerConfig { batch_size: 40, epochs: 2, ..TrainerConfig::bandit() },
        ..DeploymentConfig::default()
    };
    let log = run_deployment(&r.init, &r.pool, &r.test, &cfg, |_, _| Ok(())).unwrap();
    let mut batches = 0;
    for rec in &log.rounds {
        let comp = &rec.training.batch_composition;
        ensure!(comp.len() == 2 * 10, "round {}: {} batches", rec.round, comp.len());
        let want = if rec.round == 1 { (20, 0) } else { (20, 20) };
        if let Some(bad) = comp.iter().find(|c| **c != want) {
            return Err(format!("round {}: batch {bad:?}, want {want:?}", rec.round));
        }
        if rec.round > 1 {
            batches += comp.len();
        }
    }
    Ok(format!("B=40, T=200: all {batches} batches after round 1 are 20 recent + 20 history"))
}

fn headline(m: &Metrics) -> Option<String> {
    Some(format!(
        "F1 {:.2} / ans {:.2} / unans {:.2} / cls {:.2}",
        m.f1, m.ans_f1?, m.unans_f1?, m.cls_accuracy
    ))
}

fn one_vs_multi(r: &Runs, one_round: &ExperimentLog) -> Check {
    let multi_cfg = DeploymentConfig { rounds: 4, ..DeploymentConfig::default() };
    let multi = run_deployment(&r.init, &r.pool, &r.test, &multi_cfg, |_, _| Ok(())).unwrap();
    let one_cfg = DeploymentConfig::one_round();
    let again = run_deployment(&r.init, &r.pool, &r.test, &one_cfg, |_, _| Ok(())).unwrap();

    ensure!(multi.stream.len() == 800 && multi.stream == one_round.stream, "the two arms consumed different streams");
    // Same seeds, so the 4-round run is a prefix of the 9-round run.
    ensure!(multi.stream[..] == r.long.stream[..800], "4x200 stream is not a prefix of the 9x200 stream");
    ensure!(multi.rounds[..] == r.long.rounds[..4], "4x200 rounds differ from a rerun of the same seeds");
    ensure!(multi.final_metrics == r.long.rounds[4].metrics, "4x200 final metrics are not reproducible");
    ensure!(again == *one_round, "ONE_ROUND is not deterministic");
    ensure!(one_round.interactions.iter().all(|x| x.round == 1), "ONE_ROUND logged with a later policy");
    let a = headline(&multi.final_metrics).ok_or("4x200 is missing a subset column")?;
    let b = headline(&one_round.final_metrics).ok_or("1x800 is missing a subset column")?;
    Ok(format!("4x200: {a}; 1x800: {b}"))
}

fn sensitivity(r: &Runs, one_round: &ExperimentLog) -> Check {
    let pool = &one_round.interactions;
    ensure!(pool.len() == 800, "pool has {} interactions", pool.len());
    let trainer = TrainerConfig::bandit();
    let run = |seed| {
        resample_sensitivity(&r.init, pool, 10, 200, &trainer, &r.test, DEFAULT_MAX_ANSWER_LEN, seed).unwrap()
    };
    let rep: SensitivityReport = run(0);
    ensure!(rep.per_set.len() == 10, "{} sets", rep.per_set.len());
    let mut lines = Vec::new();
    for s in &rep.summary {
        let values: Vec<f64> = rep
            .per_set
            .iter()
            .filter_map(|m| match s.name.as_str() {
                "f1" => Some(m.f1),
                "ans_f1" => m.ans_f1,
                "unans_f1" => m.unans_f1,
                "cls_accuracy" => Some(m.cls_accuracy),
                "pct_pred_unans" => Some(m.pct_pred_unans),
                _ => None,
            })
            .collect();
        ensure!(values == s.values, "{}: values do not match the per-set metrics", s.name);
        // Welford's update, independent of the two-pass formula.
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for v in &values {
            n += 1.0;
            let d = v - mean;
            mean += d / n;
            m2 += d * (v - mean);
        }
        let sd = (m2 / (n - 1.0)).sqrt();
        ensure!((mean - s.mean).abs() <= 1e-9 * mean.abs().max(1.0), "{}: mean {} vs {mean}", s.name, s.mean);
        ensure!((sd - s.std).abs() <= 1e-9 * sd.max(1.0), "{}: sigma {} vs {sd}", s.name, s.std);
        lines.push(format!("{} {:.2}±{:.2}", s.name, s.mean, s.std));
    }
    ensure!(run(0) == rep, "same seed gave a different report");
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------------------
// Service under load

struct Client {
    base: String,
    http: reqwest::Client,
    svc: Arc<Service>,
}

impl Client {
    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }
}

/// `(question_id, model_id)` of every completed feedback, or the first inconsistency.
async fn user(c: Arc<Client>, id: usize, stop: Arc<AtomicBool>, min_cycles: usize) -> Result<Vec<(String, String)>, String> {
    let (_, s) = c.post("/session", json!({})).await;
    let sid = s["session_id"].as_str().unwrap().to_string();
    let mut done = Vec::new();
    let mut cycle = 0;
    while cycle < min_cycles || !stop.load(Ordering::SeqCst) {
        let (_, p) = c.get(&format!("/prompt?session_id={sid}")).await;
        let t = &p["topics"][cycle % 4];
        let (_, a) = c.post("/topic", json!({"session_id": sid, "topic_id": t["topic_id"]})).await;
        let aspect = &a["aspects"][id % 4];
        let text = format!("who is user {id} asking about in cycle {cycle}");
        let (status, q) =
            c.post("/question", json!({"session_id": sid, "aspect_id": aspect["aspect_id"], "question": text})).await;
        ensure!(status == 200, "question failed: {q}");
        let model_id = q["model_id"].as_str().unwrap().to_string();
        let (params, _) = load_checkpoint(c.svc.checkpoint_path(&model_id)).map_err(|e| e.to_string())?;
        let question =
            Question::with_prompt(&text, t["name"].as_str().unwrap(), aspect["name"].as_str().unwrap()).unwrap();
        let context = Context::new(q["context"]["text"].as_str().unwrap()).unwrap();
        let pred = params.predict(&question, &context, c.svc.config().max_answer_len).unwrap();
        let ans = &q["answer"];
        let same = match pred.span {
            None => ans["unanswerable"] == true,
            Some(s) => ans["token_start"] == s.start && ans["token_end"] == s.end,
        };
        ensure!(same, "answer {ans} was not produced by snapshot {model_id}");
        let f = ["CORRECT", "PARTIALLY_CORRECT", "WRONG"][(id + cycle) % 3];
        let (status, ack) = c.post("/feedback", json!({"session_id": sid, "feedback": f})).await;
        ensure!(status == 200 && ack["duplicate"] == false, "feedback failed: {ack}");
        done.push((q["question_id"].as_str().unwrap().to_string(), model_id));
        cycle += 1;
    }
    Ok(done)
}

async fn load_test(init: PolicyParams) -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        test_branch_prob: 0.0,
        fsync: false,
        trainer: TrainerConfig { epochs: 200, ..TrainerConfig::bandit() },
        ..ServiceConfig::default()
    };
    let topics = load_topic_pool(data("topics.json")).unwrap();
    let svc = Arc::new(Service::new(cfg, topics, vec![DeployedSnapshot::new(init, 0)], dir.path()).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(serve(listener, svc.clone()));
    let c = Arc::new(Client { base, http: reqwest::Client::new(), svc: svc.clone() });

    let mut completed = Vec::new();
    let warm = Arc::new(AtomicBool::new(true));
    for h in (0..20).map(|u| tokio::spawn(user(c.clone(), u, warm.clone(), 1))).collect::<Vec<_>>() {
        completed.extend(h.await.unwrap()?);
    }
    let old = svc.status().model_id;
    let stop = Arc::new(AtomicBool::new(false));
    let users: Vec<_> = (0..20).map(|u| tokio::spawn(user(c.clone(), u, stop.clone(), 2))).collect();
    let (status, adv) = c.post("/admin/advance", json!({})).await;
    stop.store(true, Ordering::SeqCst);
    ensure!(status == 200, "advance failed: {adv}");
    let new = adv["model_id"].as_str().unwrap().to_string();
    for h in users {
        completed.extend(h.await.unwrap()?);
    }

    let log: Vec<LoggedInteraction> = JsonlLog::load(svc.feedback_log_path()).unwrap().records;
    ensure!(log.len() == completed.len(), "{} log records for {} feedbacks", log.len(), completed.len());
    let by_q: HashMap<&str, &LoggedInteraction> = log.iter().map(|r| (r.question_id.as_str(), r)).collect();
    ensure!(by_q.len() == log.len(), "a question was logged twice");
    let mut per_model: HashMap<&str, usize> = HashMap::new();
    for (qid, model) in &completed {
        let rec = by_q.get(qid.as_str()).ok_or(format!("feedback {qid} missing from the log"))?;
        ensure!(&rec.model_id == model, "{qid}: served by {model}, logged as {}", rec.model_id);
        ensure!(model == &old || model == &new, "{qid}: unknown snapshot {model}");
        *per_model.entry(model.as_str()).or_default() += 1;
    }
    let pending = svc.status().pending_interactions;
    ensure!(pending > 0, "no feedback overlapped the advance");
    Ok(format!(
        "{} feedbacks, {} records; {} on {old}, {} on {new}; {pending} arrived during training",
        completed.len(),
        log.len(),
        per_model.get(old.as_str()).unwrap_or(&0),
        per_model.get(new.as_str()).unwrap_or(&0)
    ))
}

fn service_under_load(r: &Runs) -> Check {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
    rt.block_on(load_test(r.init.clone()))
}

// ---------------------------------------------------------------------------

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Check| {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e} [{secs:.1}s]");
            }
        }
    };

    report("reward table", &mut reward_table);
    report("gradient correctness", &mut gradients);
    report("omission semantics", &mut omission);
    report("token_f1 oracle equivalence", &mut oracle_equivalence);

    let runs = catch_unwind(prepare);
    let one_round = runs.as_ref().ok().map(|r| {
        catch_unwind(AssertUnwindSafe(|| {
            run_deployment(&r.init, &r.pool, &r.test, &DeploymentConfig::one_round(), |_, _| Ok(())).unwrap()
        }))
    });
    let mut missing = || Err::<String, _>("deployment run failed".to_string());
    match (&runs, &one_round) {
        (Ok(r), Some(Ok(one))) => {
            report("IPS identities", &mut || ips_identities(r));
            report("rehearsal composition", &mut || rehearsal(r));
            report("continual improvement", &mut || continual_improvement(r));
            report("one-round vs multi-round", &mut || one_vs_multi(r, one));
            assert_eq!(one.variant, Variant::OneRound);
            report("sensitivity protocol", &mut || sensitivity(r, one));
            report("service under load", &mut || service_under_load(r));
        }
        _ => {
            for name in [
                "IPS identities",
                "rehearsal composition",
                "continual improvement",
                "one-round vs multi-round",
                "sensitivity protocol",
                "service under load",
            ] {
                report(name, &mut missing);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
