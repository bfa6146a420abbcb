use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const WORDS: &[&str] = &[
    "saladin", "died", "of", "a", "fever", "in", "damascus", "the", "sultan", "was", "born", "tikrit", "1137",
    "who", "where", "when", "what", "?", ".", "city",
];

fn tiny_dims() -> PolicyDims {
    PolicyDims { vocab_size: 16, embed_dim: 3, hidden_dim: 4, max_context_len: 12 }
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

struct Instance {
    params: PolicyParams,
    question: Question,
    context: Context,
    span: Span,
}

fn instance(seed: u64, mode: PolicyMode) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = PolicyParams::random(tiny_dims(), mode, seed, 0.8);
    params.answer_b = rng.random_range(-1.0..1.0);
    params.start_b = rng.random_range(-1.0..1.0);
    let m = rng.random_range(1..=4);
    let n = rng.random_range(1..=6);
    let question = Question::new(&words(&mut rng, m)).unwrap();
    let context = Context::new(&words(&mut rng, n)).unwrap();
    let i = rng.random_range(1..=n);
    let j = rng.random_range(i..=n);
    Instance { params, question, context, span: Span::new(i, j) }
}

/// Central finite differences of `f` at every parameter.
fn finite_diff(params: &PolicyParams, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let step = 1e-5;
    let mut p = params.clone();
    (0..params.flat_len())
        .map(|i| {
            let x = p.flat_get(i);
            p.flat_set(i, x + step);
            let up = f(&p);
            p.flat_set(i, x - step);
            let down = f(&p);
            p.flat_set(i, x);
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn assert_grad_matches(params: &PolicyParams, grad: &ParamGradient, f: impl Fn(&PolicyParams) -> f64) {
    let numeric = finite_diff(params, f);
    for (i, fd) in numeric.iter().enumerate() {
        let an = grad.flat_get(params, i);
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
        assert!(rel < 1e-4, "param {i}: analytic {an} vs numeric {fd} (rel {rel})");
    }
}

#[test]
fn zero_params_give_uniform_distributions() {
    let p = PolicyParams::zeros(PolicyDims::default(), PolicyMode::TwoHead);
    let q = Question::new("who died ?").unwrap();
    let c = Context::new("Saladin died of fever").unwrap();
    let d = p.forward(&q, &c).unwrap();
    assert_eq!(d.p_unans, 0.5);
    assert_eq!(d.p_start, vec![0.25; 4]);
    assert_eq!(d.p_end, vec![0.25; 4]);
}

#[test]
fn seeded_random_distributions_normalize() {
    for seed in 0..20 {
        for mode in [PolicyMode::TwoHead, PolicyMode::SpanOnly] {
            let inst = instance(seed, mode);
            let d = inst.params.forward(&inst.question, &inst.context).unwrap();
            assert!((d.p_start.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((d.p_end.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&d.p_unans));
        }
    }
}

#[test]
fn start_head_favoring_token_two() {
    let dims = PolicyDims { vocab_size: 32768, embed_dim: 4, hidden_dim: 4, max_context_len: 490 };
    let mut p = PolicyParams::zeros(dims, PolicyMode::TwoHead);
    let c = Context::new("Saladin died of fever").unwrap();
    let q = Question::new("how did he die ?").unwrap();
    // hidden unit 0 reads embedding coordinate 0; only "died" has it set
    let row = hash_token("died", dims.vocab_size);
    p.embedding[row * dims.embed_dim] = 2.0;
    p.hidden_w[0] = 1.0;
    p.start_w[0] = 5.0;
    let d = p.forward(&q, &c).unwrap();
    // logits are [0, 5 tanh 2, 0, 0]
    let expected = 5.0 * 2.0f64.tanh();
    let z = 3.0 + expected.exp();
    assert!((d.start(2) - expected.exp() / z).abs() < 1e-12);
    let argmax = (1..=4).max_by(|&a, &b| d.start(a).total_cmp(&d.start(b))).unwrap();
    assert_eq!(argmax, 2);
}

#[test]
fn context_too_long_is_rejected() {
    let p = PolicyParams::zeros(tiny_dims(), PolicyMode::TwoHead);
    let q = Question::new("who").unwrap();
    let c = Context::new(&vec!["x"; 13].join(" ")).unwrap();
    assert!(matches!(p.forward(&q, &c), Err(Error::Input(_))));
}

#[test]
fn non_finite_params_are_a_state_error() {
    let mut p = PolicyParams::zeros(tiny_dims(), PolicyMode::TwoHead);
    p.hidden_b[1] = f64::INFINITY;
    let q = Question::new("who").unwrap();
    let c = Context::new("x y").unwrap();
    assert!(matches!(p.forward(&q, &c), Err(Error::State(_))));
}

fn dists(p_unans: f64, p_start: Vec<f64>, p_end: Vec<f64>) -> PolicyDistributions {
    PolicyDistributions { mode: PolicyMode::TwoHead, p_unans, p_start, p_end }
}

#[test]
fn decode_unanswerable_when_p_unans_wins() {
    let pred = decode(&dists(0.6, vec![0.5, 0.5], vec![0.5, 0.5]), 30).unwrap();
    assert_eq!(pred.answerable, Answerability::Unans);
    assert_eq!(pred.span, None);
    assert_eq!(pred.propensities.answerability, Some(0.6));
    assert_eq!(pred.propensities.span, None);
}

#[test]
fn decode_exact_half_is_answerable() {
    let pred = decode(&dists(0.5, vec![1.0], vec![1.0]), 30).unwrap();
    assert_eq!(pred.answerable, Answerability::Ans);
}

#[test]
fn decode_uniform_ties_break_lexicographically() {
    let u = vec![1.0 / 3.0; 3];
    let d = dists(0.4, u.clone(), u);
    // brute force: every valid pair has probability 1/9
    let valid: Vec<(usize, usize)> =
        (1..=3).flat_map(|i| (i..=3).map(move |j| (i, j))).filter(|(i, j)| j - i + 1 <= 2).collect();
    assert!(valid.iter().all(|&(i, j)| d.start(i) * d.end(j) == 1.0 / 9.0));
    let pred = decode(&d, 2).unwrap();
    assert_eq!(pred.span, Some(Span::new(1, 1)));
    assert!((pred.propensities.answerability.unwrap() - 0.6).abs() < 1e-15);
}

#[test]
fn decode_respects_start_before_end() {
    let d = dists(0.1, vec![0.1, 0.1, 0.7, 0.1], vec![0.1, 0.7, 0.1, 0.1]);
    let pred = decode(&d, 4).unwrap();
    let brute = brute_force_span(&d, 4);
    assert_ne!(pred.span, Some(Span::new(3, 2)));
    assert_eq!(pred.span, Some(brute));
    // (1,2), (2,2), (3,3) and (3,4) all score 0.07; the tie goes to (1,2)
    assert_eq!(brute, Span::new(1, 2));
}

fn brute_force_span(d: &PolicyDistributions, max_len: usize) -> Span {
    let n = d.n();
    let mut all: Vec<(Span, f64)> = Vec::new();
    for i in 1..=n {
        for j in 1..=n {
            if i <= j && j - i < max_len {
                all.push((Span::new(i, j), d.start(i) * d.end(j)));
            }
        }
    }
    let best = all.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    all.into_iter().filter(|x| x.1 == best).map(|x| x.0).min().unwrap()
}

#[test]
fn span_only_sentinel_decodes_unanswerable() {
    let d = PolicyDistributions {
        mode: PolicyMode::SpanOnly,
        p_unans: 0.5 * 0.5,
        p_start: vec![0.5, 0.25, 0.25],
        p_end: vec![0.5, 0.25, 0.25],
    };
    let pred = decode(&d, 30).unwrap();
    assert_eq!(pred.answerable, Answerability::Unans);
    assert_eq!(pred.propensities, Propensities { answerability: None, span: Some(0.25) });
}

#[test]
fn log_probs_in_uniform_case() {
    let p = PolicyParams::zeros(PolicyDims::default(), PolicyMode::TwoHead);
    let q = Question::new("who died ?").unwrap();
    let c = Context::new("Saladin died of fever").unwrap();
    let lp = p.log_prob_actions(&q, &c, Answerability::Ans, Some(Span::new(2, 2))).unwrap();
    assert!((lp.answerability.unwrap() - 0.5f64.ln()).abs() < 1e-15);
    assert!((lp.span.unwrap() - 2.0 * 0.25f64.ln()).abs() < 1e-15);
    let lp = p.log_prob_actions(&q, &c, Answerability::Unans, None).unwrap();
    assert_eq!(lp.span, None);
}

#[test]
fn log_prob_argument_errors() {
    let p = PolicyParams::zeros(tiny_dims(), PolicyMode::TwoHead);
    let q = Question::new("who").unwrap();
    let c = Context::new("x y").unwrap();
    assert!(p.log_prob_actions(&q, &c, Answerability::Ans, Some(Span::new(2, 3))).is_err());
    assert!(p.log_prob_actions(&q, &c, Answerability::Ans, None).is_err());
    assert!(p.log_prob_actions(&q, &c, Answerability::Unans, Some(Span::new(1, 1))).is_err());
}

#[test]
fn log_pu_matches_forward() {
    for seed in 0..10 {
        let inst = instance(seed, PolicyMode::TwoHead);
        let d = inst.params.forward(&inst.question, &inst.context).unwrap();
        for u in [Answerability::Ans, Answerability::Unans] {
            let span = (u == Answerability::Ans).then_some(inst.span);
            let lp = inst.params.log_prob_actions(&inst.question, &inst.context, u, span).unwrap();
            assert!((lp.answerability.unwrap().exp() - d.answer_prob(u)).abs() < 1e-9);
        }
    }
}

#[test]
fn grad_log_prob_matches_finite_differences() {
    for seed in 0..12 {
        let inst = instance(100 + seed, PolicyMode::TwoHead);
        let (q, c, s) = (&inst.question, &inst.context, inst.span);
        for u in [Answerability::Ans, Answerability::Unans] {
            let span = (u == Answerability::Ans).then_some(s);
            let grads = inst.params.grad_log_prob(q, c, u, span).unwrap();
            assert_grad_matches(&inst.params, grads.answerability.as_ref().unwrap(), |p| {
                p.log_prob_actions(q, c, u, span).unwrap().answerability.unwrap()
            });
            match u {
                Answerability::Ans => assert_grad_matches(&inst.params, grads.span.as_ref().unwrap(), |p| {
                    p.log_prob_actions(q, c, u, span).unwrap().span.unwrap()
                }),
                Answerability::Unans => assert!(grads.span.is_none()),
            }
        }
    }
}

#[test]
fn span_only_grad_matches_finite_differences() {
    for seed in 0..10 {
        let inst = instance(200 + seed, PolicyMode::SpanOnly);
        let (q, c) = (&inst.question, &inst.context);
        for (u, span) in [(Answerability::Ans, Some(inst.span)), (Answerability::Unans, None)] {
            let grads = inst.params.grad_log_prob(q, c, u, span).unwrap();
            assert!(grads.answerability.is_none());
            assert_grad_matches(&inst.params, grads.span.as_ref().unwrap(), |p| {
                p.log_prob_actions(q, c, u, span).unwrap().span.unwrap()
            });
        }
    }
}

#[test]
fn saturated_answerability_has_vanishing_gradient() {
    let mut inst = instance(7, PolicyMode::TwoHead);
    inst.params.answer_b = 60.0;
    let g = inst.params.grad_log_prob(&inst.question, &inst.context, Answerability::Unans, None).unwrap();
    assert!(g.answerability.unwrap().max_abs() < 1e-20);
}

#[test]
fn start_logit_derivatives_sum_to_zero() {
    for seed in 0..10 {
        let inst = instance(300 + seed, PolicyMode::TwoHead);
        let trace = inst.params.trace(&inst.question, &inst.context).unwrap();
        let up = upstream_log_ps(&trace, Some(inst.span));
        assert!(up.start.iter().sum::<f64>().abs() < 1e-12);
        assert!(up.end.iter().sum::<f64>().abs() < 1e-12);
        // the head bias shifts every logit equally, so its gradient is that sum
        let g = inst.params.backward(&trace, &up);
        assert!(g.start_b.abs() < 1e-12 && g.end_b.abs() < 1e-12);
    }
}

#[test]
fn entropy_at_maximum_and_saturation() {
    let p = PolicyParams::zeros(tiny_dims(), PolicyMode::TwoHead);
    let q = Question::new("who").unwrap();
    let c = Context::new("x y z").unwrap();
    let (h, g) = p.entropy_and_grad(&q, &c).unwrap();
    assert_eq!(h, 2.0f64.ln());
    assert_eq!(g.max_abs(), 0.0);

    let mut p = p;
    p.answer_b = 40.0;
    let (h, _) = p.entropy_and_grad(&q, &c).unwrap();
    assert!((0.0..1e-15).contains(&h));
}

#[test]
fn entropy_requires_two_head_mode() {
    let p = PolicyParams::zeros(tiny_dims(), PolicyMode::SpanOnly);
    let q = Question::new("who").unwrap();
    let c = Context::new("x").unwrap();
    assert!(matches!(p.entropy_and_grad(&q, &c), Err(Error::UnsupportedMode { .. })));
}

#[test]
fn entropy_grad_matches_finite_differences() {
    for seed in 0..12 {
        let inst = instance(400 + seed, PolicyMode::TwoHead);
        let (q, c) = (&inst.question, &inst.context);
        let (h, g) = inst.params.entropy_and_grad(q, c).unwrap();
        assert!((0.0..=2.0f64.ln()).contains(&h));
        assert_grad_matches(&inst.params, &g, |p| p.entropy_and_grad(q, c).unwrap().0);
    }
}

#[test]
fn supervised_grad_matches_finite_differences() {
    for seed in 0..12 {
        for mode in [PolicyMode::TwoHead, PolicyMode::SpanOnly] {
            let inst = instance(500 + seed, mode);
            for gold in [Some(inst.span), None] {
                let ex = LabeledExample { question: inst.question.clone(), context: inst.context.clone(), gold };
                let (_, g) = inst.params.supervised_loss_and_grad(&ex, 1.7).unwrap();
                assert_grad_matches(&inst.params, &g, |p| p.supervised_loss_and_grad(&ex, 1.7).unwrap().0);
            }
        }
    }
}

#[test]
fn supervised_loss_zero_when_gold_is_certain() {
    let dims = PolicyDims { vocab_size: 32768, embed_dim: 2, hidden_dim: 2, max_context_len: 490 };
    let mut p = PolicyParams::zeros(dims, PolicyMode::TwoHead);
    let row = hash_token("fever", dims.vocab_size);
    p.embedding[row * 2] = 50.0;
    p.hidden_w[0] = 1.0;
    p.start_w[0] = 1000.0;
    p.end_w[0] = 1000.0;
    p.answer_b = -1000.0;
    let ex = LabeledExample {
        question: Question::new("what killed him ?").unwrap(),
        context: Context::new("Saladin died of a fever .").unwrap(),
        gold: Some(Span::new(5, 5)),
    };
    let (loss, _) = p.supervised_loss_and_grad(&ex, 1.0).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn lambda_zero_ignores_answerability_head() {
    let inst = instance(9, PolicyMode::TwoHead);
    for gold in [Some(inst.span), None] {
        let ex = LabeledExample { question: inst.question.clone(), context: inst.context.clone(), gold };
        let (base, g) = inst.params.supervised_loss_and_grad(&ex, 0.0).unwrap();
        assert_eq!(g.answer_head_max_abs(), 0.0);
        let mut moved = inst.params.clone();
        moved.answer_b += 3.0;
        moved.answer_w.iter_mut().for_each(|w| *w -= 2.0);
        assert_eq!(moved.supervised_loss_and_grad(&ex, 0.0).unwrap().0, base);
    }
}

#[test]
fn supervised_rejects_invalid_gold() {
    let inst = instance(1, PolicyMode::TwoHead);
    let n = inst.context.len();
    let ex = LabeledExample {
        question: inst.question.clone(),
        context: inst.context.clone(),
        gold: Some(Span::new(1, n + 1)),
    };
    assert!(inst.params.supervised_loss_and_grad(&ex, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_distributions_normalize(seed in any::<u64>(), two_head in any::<bool>()) {
        let mode = if two_head { PolicyMode::TwoHead } else { PolicyMode::SpanOnly };
        let inst = instance(seed, mode);
        let d = inst.params.forward(&inst.question, &inst.context).unwrap();
        prop_assert!((d.p_start.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!((d.p_end.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!((0.0..=1.0).contains(&d.p_unans));
        let again = inst.params.forward(&inst.question, &inst.context).unwrap();
        prop_assert_eq!(d, again);
    }

    #[test]
    fn prop_decode_matches_exhaustive_search(
        starts in prop::collection::vec(0.0f64..5.0, 1..=12),
        ends_seed in any::<u64>(),
        max_len in 1usize..14,
        p_unans in 0.0f64..0.5,
    ) {
        let n = starts.len();
        let mut rng = ChaCha8Rng::seed_from_u64(ends_seed);
        let ends: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let d = dists(p_unans, softmax(&starts), softmax(&ends));
        let pred = decode(&d, max_len).unwrap();
        prop_assert_eq!(pred.answerable, Answerability::Ans);
        prop_assert_eq!(pred.span, Some(brute_force_span(&d, max_len)));
    }

    #[test]
    fn prop_mode_exclusivity(seed in any::<u64>()) {
        let inst = instance(seed, PolicyMode::TwoHead);
        let pred = inst.params.predict(&inst.question, &inst.context, 30).unwrap();
        if let Some(s) = pred.span {
            prop_assert!(s.start >= 1);
        }
        // span-only predictions do not depend on the answerability head
        let inst = instance(seed, PolicyMode::SpanOnly);
        let mut other = inst.params.clone();
        other.answer_b = 100.0;
        other.answer_w.iter_mut().for_each(|w| *w = -7.0);
        let a = inst.params.predict(&inst.question, &inst.context, 30).unwrap();
        let b = other.predict(&inst.question, &inst.context, 30).unwrap();
        prop_assert_eq!(a, b);
    }
}
