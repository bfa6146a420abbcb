use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::DEFAULT_MAX_CONTEXT_LEN;

/// How unanswerability is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PolicyMode {
    /// Separate binary answerability head plus start/end heads.
    TwoHead,
    /// No answerability head; a sentinel position 0 stands for "unanswerable".
    SpanOnly,
}

impl PolicyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyMode::TwoHead => "TWO_HEAD",
            PolicyMode::SpanOnly => "SPAN_ONLY",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyDims {
    /// Rows in the hashed embedding table.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_context_len: usize,
}

impl Default for PolicyDims {
    fn default() -> Self {
        PolicyDims {
            vocab_size: 32768,
            embed_dim: 64,
            hidden_dim: 64,
            max_context_len: DEFAULT_MAX_CONTEXT_LEN,
        }
    }
}

impl PolicyDims {
    pub fn feature_dim(&self) -> usize {
        3 * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 || self.max_context_len == 0 {
            return Err(Error::Config(format!("all policy dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// FNV-1a (64-bit) of the lowercased token, reduced modulo the vocabulary size.
pub fn hash_token(token: &str, vocab_size: usize) -> usize {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for ch in token.chars().flat_map(char::to_lowercase) {
        let mut buf = [0u8; 4];
        for b in ch.encode_utf8(&mut buf).bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    }
    (h % vocab_size as u64) as usize
}

/// All learnable weights of the policy.
///
/// Layout: per-token features `[e ; q ; e*q]` feed a tanh hidden layer;
/// start/end heads score each hidden vector; the answerability head scores
/// the mean-pooled hidden vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub dims: PolicyDims,
    pub mode: PolicyMode,
    /// `vocab_size x embed_dim`, row-major.
    pub embedding: Vec<f64>,
    /// `hidden_dim x 3*embed_dim`, row-major.
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub start_w: Vec<f64>,
    pub start_b: f64,
    pub end_w: Vec<f64>,
    pub end_b: f64,
    pub answer_w: Vec<f64>,
    pub answer_b: f64,
}

impl PolicyParams {
    pub fn zeros(dims: PolicyDims, mode: PolicyMode) -> Self {
        let h = dims.hidden_dim;
        PolicyParams {
            dims,
            mode,
            embedding: vec![0.0; dims.vocab_size * dims.embed_dim],
            hidden_w: vec![0.0; h * dims.feature_dim()],
            hidden_b: vec![0.0; h],
            start_w: vec![0.0; h],
            start_b: 0.0,
            end_w: vec![0.0; h],
            end_b: 0.0,
            answer_w: vec![0.0; h],
            answer_b: 0.0,
        }
    }

    /// Seeded random initialization.
    ///
    /// Embeddings ~ N(0, embed_scale^2); layer weights use 1/sqrt(fan_in) scaling.
    pub fn random(dims: PolicyDims, mode: PolicyMode, seed: u64, embed_scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims, mode);
        let mut fill = |v: &mut [f64], std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            v.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        };
        fill(&mut p.embedding, embed_scale);
        fill(&mut p.hidden_w, 1.0 / (dims.feature_dim() as f64).sqrt());
        let head_std = 1.0 / (dims.hidden_dim as f64).sqrt();
        fill(&mut p.start_w, head_std);
        fill(&mut p.end_w, head_std);
        fill(&mut p.answer_w, head_std);
        p
    }

    pub fn embedding_row(&self, id: usize) -> &[f64] {
        let d = self.dims.embed_dim;
        &self.embedding[id * d..(id + 1) * d]
    }

    /// Total number of scalar parameters.
    pub fn flat_len(&self) -> usize {
        self.embedding.len()
            + self.hidden_w.len()
            + self.hidden_b.len()
            + 3 * self.dims.hidden_dim
            + 3
    }

    fn flat_locate(&self, mut i: usize) -> FlatSlot {
        let h = self.dims.hidden_dim;
        if i < self.embedding.len() {
            return FlatSlot::Embedding(i);
        }
        i -= self.embedding.len();
        if i < self.hidden_w.len() {
            return FlatSlot::HiddenW(i);
        }
        i -= self.hidden_w.len();
        if i < h {
            return FlatSlot::HiddenB(i);
        }
        i -= h;
        if i < h {
            return FlatSlot::StartW(i);
        }
        i -= h;
        if i == 0 {
            return FlatSlot::StartB;
        }
        i -= 1;
        if i < h {
            return FlatSlot::EndW(i);
        }
        i -= h;
        if i == 0 {
            return FlatSlot::EndB;
        }
        i -= 1;
        if i < h {
            return FlatSlot::AnswerW(i);
        }
        i -= h;
        assert!(i == 0, "flat index out of range");
        FlatSlot::AnswerB
    }

    /// Read one parameter by its position in the flattened layout
    /// (embedding, hidden_w, hidden_b, start_w, start_b, end_w, end_b, answer_w, answer_b).
    pub fn flat_get(&self, i: usize) -> f64 {
        match self.flat_locate(i) {
            FlatSlot::Embedding(k) => self.embedding[k],
            FlatSlot::HiddenW(k) => self.hidden_w[k],
            FlatSlot::HiddenB(k) => self.hidden_b[k],
            FlatSlot::StartW(k) => self.start_w[k],
            FlatSlot::StartB => self.start_b,
            FlatSlot::EndW(k) => self.end_w[k],
            FlatSlot::EndB => self.end_b,
            FlatSlot::AnswerW(k) => self.answer_w[k],
            FlatSlot::AnswerB => self.answer_b,
        }
    }

    pub fn flat_set(&mut self, i: usize, v: f64) {
        match self.flat_locate(i) {
            FlatSlot::Embedding(k) => self.embedding[k] = v,
            FlatSlot::HiddenW(k) => self.hidden_w[k] = v,
            FlatSlot::HiddenB(k) => self.hidden_b[k] = v,
            FlatSlot::StartW(k) => self.start_w[k] = v,
            FlatSlot::StartB => self.start_b = v,
            FlatSlot::EndW(k) => self.end_w[k] = v,
            FlatSlot::EndB => self.end_b = v,
            FlatSlot::AnswerW(k) => self.answer_w[k] = v,
            FlatSlot::AnswerB => self.answer_b = v,
        }
    }

    /// Checks every dense parameter and the given embedding rows.
    pub(crate) fn check_finite_rows(&self, rows: &[usize]) -> Result<()> {
        let dense_ok = self
            .hidden_w
            .iter()
            .chain(&self.hidden_b)
            .chain(&self.start_w)
            .chain(&self.end_w)
            .chain(&self.answer_w)
            .chain([&self.start_b, &self.end_b, &self.answer_b])
            .all(|x| x.is_finite());
        let rows_ok = rows.iter().all(|&r| self.embedding_row(r).iter().all(|x| x.is_finite()));
        if dense_ok && rows_ok {
            Ok(())
        } else {
            Err(Error::State("non-finite policy parameter".into()))
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::State("non-finite embedding entry".into()));
        }
        self.check_finite_rows(&[])
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let d = self.dims;
        let h = d.hidden_dim;
        let ok = self.embedding.len() == d.vocab_size * d.embed_dim
            && self.hidden_w.len() == h * d.feature_dim()
            && self.hidden_b.len() == h
            && self.start_w.len() == h
            && self.end_w.len() == h
            && self.answer_w.len() == h;
        if !ok {
            return Err(Error::State("parameter shapes inconsistent with dims".into()));
        }
        Ok(())
    }

    /// `self += scale * grad`. Returns the embedding rows that changed.
    pub fn add_scaled(&mut self, grad: &ParamGradient, scale: f64) -> Vec<usize> {
        let d = self.dims.embed_dim;
        for (&row, g) in &grad.embedding {
            let dst = &mut self.embedding[row * d..(row + 1) * d];
            dst.iter_mut().zip(g).for_each(|(x, gi)| *x += scale * gi);
        }
        axpy(&mut self.hidden_w, &grad.hidden_w, scale);
        axpy(&mut self.hidden_b, &grad.hidden_b, scale);
        axpy(&mut self.start_w, &grad.start_w, scale);
        axpy(&mut self.end_w, &grad.end_w, scale);
        axpy(&mut self.answer_w, &grad.answer_w, scale);
        self.start_b += scale * grad.start_b;
        self.end_b += scale * grad.end_b;
        self.answer_b += scale * grad.answer_b;
        grad.embedding.keys().copied().collect()
    }
}

enum FlatSlot {
    Embedding(usize),
    HiddenW(usize),
    HiddenB(usize),
    StartW(usize),
    StartB,
    EndW(usize),
    EndB,
    AnswerW(usize),
    AnswerB,
}

pub(crate) fn axpy(dst: &mut [f64], src: &[f64], scale: f64) {
    dst.iter_mut().zip(src).for_each(|(x, s)| *x += scale * s);
}

/// Gradient with the same logical shape as [`PolicyParams`].
///
/// Embedding rows are stored sparsely (only rows touched by the example), in
/// ascending row order so reductions are deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGradient {
    pub embed_dim: usize,
    pub embedding: BTreeMap<usize, Vec<f64>>,
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub start_w: Vec<f64>,
    pub start_b: f64,
    pub end_w: Vec<f64>,
    pub end_b: f64,
    pub answer_w: Vec<f64>,
    pub answer_b: f64,
}

impl ParamGradient {
    pub fn zeros(dims: &PolicyDims) -> Self {
        let h = dims.hidden_dim;
        ParamGradient {
            embed_dim: dims.embed_dim,
            embedding: BTreeMap::new(),
            hidden_w: vec![0.0; h * dims.feature_dim()],
            hidden_b: vec![0.0; h],
            start_w: vec![0.0; h],
            start_b: 0.0,
            end_w: vec![0.0; h],
            end_b: 0.0,
            answer_w: vec![0.0; h],
            answer_b: 0.0,
        }
    }

    pub(crate) fn embedding_row_mut(&mut self, row: usize) -> &mut Vec<f64> {
        let d = self.embed_dim;
        self.embedding.entry(row).or_insert_with(|| vec![0.0; d])
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamGradient, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for (&row, g) in &other.embedding {
            axpy(self.embedding_row_mut(row), g, scale);
        }
        axpy(&mut self.hidden_w, &other.hidden_w, scale);
        axpy(&mut self.hidden_b, &other.hidden_b, scale);
        axpy(&mut self.start_w, &other.start_w, scale);
        axpy(&mut self.end_w, &other.end_w, scale);
        axpy(&mut self.answer_w, &other.answer_w, scale);
        self.start_b += scale * other.start_b;
        self.end_b += scale * other.end_b;
        self.answer_b += scale * other.answer_b;
    }

    pub fn scale(&mut self, c: f64) {
        self.embedding.values_mut().flatten().for_each(|x| *x *= c);
        for v in [
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.start_w,
            &mut self.end_w,
            &mut self.answer_w,
        ] {
            v.iter_mut().for_each(|x| *x *= c);
        }
        self.start_b *= c;
        self.end_b *= c;
        self.answer_b *= c;
    }

    /// Entry at a flat index of `params`' layout; untouched embedding rows read as zero.
    pub fn flat_get(&self, params: &PolicyParams, i: usize) -> f64 {
        match params.flat_locate(i) {
            FlatSlot::Embedding(k) => {
                let d = self.embed_dim;
                self.embedding.get(&(k / d)).map_or(0.0, |row| row[k % d])
            }
            FlatSlot::HiddenW(k) => self.hidden_w[k],
            FlatSlot::HiddenB(k) => self.hidden_b[k],
            FlatSlot::StartW(k) => self.start_w[k],
            FlatSlot::StartB => self.start_b,
            FlatSlot::EndW(k) => self.end_w[k],
            FlatSlot::EndB => self.end_b,
            FlatSlot::AnswerW(k) => self.answer_w[k],
            FlatSlot::AnswerB => self.answer_b,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.values().flatten().all(|x| x.is_finite())
            && self
                .hidden_w
                .iter()
                .chain(&self.hidden_b)
                .chain(&self.start_w)
                .chain(&self.end_w)
                .chain(&self.answer_w)
                .chain([&self.start_b, &self.end_b, &self.answer_b])
                .all(|x| x.is_finite())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.embedding
            .values()
            .flatten()
            .chain(&self.hidden_w)
            .chain(&self.hidden_b)
            .chain(&self.start_w)
            .chain(&self.end_w)
            .chain(&self.answer_w)
            .chain([&self.start_b, &self.end_b, &self.answer_b])
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Largest absolute entry among parameters used only by the answerability head.
    pub fn answer_head_max_abs(&self) -> f64 {
        self.answer_w.iter().chain([&self.answer_b]).fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Largest absolute entry among parameters used only by the start/end heads.
    pub fn span_head_max_abs(&self) -> f64 {
        self.start_w
            .iter()
            .chain(&self.end_w)
            .chain([&self.start_b, &self.end_b])
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}
