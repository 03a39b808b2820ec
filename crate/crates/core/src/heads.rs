//! Prediction heads over the last four encoder blocks.
//!
//! Every head ends in a softmax; column orders are fixed:
//! answer type `[span, add_sub, count, negation]`, sign `[zero, plus, minus]`,
//! negation `[no, yes]`, rerank `[wrong, correct]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::ingest::NumberMention;
use crate::numerics::{attention_pool, dot, ffn, softmax, FfnWeights, Matrix, Scorer};
use crate::store::TensorStore;

pub const NUM_TYPES: usize = 4;
pub const NUM_SIGNS: usize = 3;
pub const NUM_COUNT_CLASSES: usize = 10;
pub const MAX_SPANS: usize = 8;

pub const TYPE_ORDER: [&str; NUM_TYPES] = ["span", "add_sub", "count", "negation"];
pub const SIGN_ORDER: [&str; NUM_SIGNS] = ["zero", "plus", "minus"];
pub const NEGATION_ORDER: [&str; 2] = ["no", "yes"];
pub const RERANK_ORDER: [&str; 2] = ["wrong", "correct"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Span,
    AddSub,
    Count,
    Negation,
}

impl AnswerType {
    pub const ALL: [AnswerType; NUM_TYPES] = [
        AnswerType::Span,
        AnswerType::AddSub,
        AnswerType::Count,
        AnswerType::Negation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        TYPE_ORDER[self.index()]
    }
}

/// Per-number sign. Declaration order is the tie-break order `zero < plus < minus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Zero,
    Plus,
    Minus,
}

impl Sign {
    pub const ALL: [Sign; NUM_SIGNS] = [Sign::Zero, Sign::Plus, Sign::Minus];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn coefficient(self) -> f64 {
        match self {
            Sign::Zero => 0.0,
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn is_nonzero(self) -> bool {
        self != Sign::Zero
    }

    pub fn negated(self) -> Sign {
        match self {
            Sign::Zero => Sign::Zero,
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// Representations `M0..M3` of the last four encoder blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub layers: [Matrix; 4],
    pub sep1: usize,
    pub sep2: usize,
}

impl EncoderOutput {
    pub fn new(layers: [Matrix; 4], sep1: usize, sep2: usize) -> Result<Self> {
        let (t, d) = (layers[0].rows(), layers[0].cols());
        if layers.iter().any(|m| m.rows() != t || m.cols() != d) {
            return Err(Error::InvalidEncoder("layers differ in shape".into()));
        }
        if !(0 < sep1 && sep1 < sep2 && sep2 + 1 == t) {
            return Err(Error::InvalidEncoder(format!(
                "marker positions sep1={sep1} sep2={sep2} invalid for length {t}"
            )));
        }
        Ok(EncoderOutput { layers, sep1, sep2 })
    }

    pub fn len(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn is_marker(&self, t: usize) -> bool {
        t == 0 || t == self.sep1 || t == self.sep2
    }

    pub fn to_store(&self) -> TensorStore {
        let mut store = TensorStore::new();
        for (i, m) in self.layers.iter().enumerate() {
            store.insert_matrix(format!("M{i}"), m);
        }
        store.meta.insert("sep1".into(), self.sep1.into());
        store.meta.insert("sep2".into(), self.sep2.into());
        store
    }

    pub fn from_store(store: &TensorStore) -> Result<Self> {
        let idx = |key: &str| {
            store
                .meta
                .get(key)
                .and_then(serde_json::Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::InvalidEncoder(format!("manifest meta lacks `{key}`")))
        };
        let layers = [
            store.matrix("M0")?,
            store.matrix("M1")?,
            store.matrix("M2")?,
            store.matrix("M3")?,
        ];
        EncoderOutput::new(layers, idx("sep1")?, idx("sep2")?)
    }
}

/// All learned parameters of the prediction heads for representation width `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub pool_q: Vec<f64>,
    pub pool_p: Vec<f64>,
    pub beta_q0: FfnWeights,
    pub beta_q1: FfnWeights,
    pub beta_q2: FfnWeights,
    /// Width `4D`.
    pub span_start: Vec<f64>,
    pub span_end: Vec<f64>,
    /// Width `2D`.
    pub num_pool: Vec<f64>,
    pub expr_pool: Vec<f64>,
    /// `3 × 2D`, rows in sign order.
    pub sign_embed: Matrix,
    pub ffn_type: FfnWeights,
    pub ffn_sign: FfnWeights,
    pub ffn_count: FfnWeights,
    pub ffn_negation: FfnWeights,
    pub ffn_span_count: FfnWeights,
    pub ffn_rerank: FfnWeights,
}

const FFN_PARTS: [&str; 6] = ["w1", "b1", "w2", "b2", "gamma", "beta"];

impl HeadWeights {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        HeadWeights {
            pool_q: vec![0.0; d],
            pool_p: vec![0.0; d],
            beta_q0: FfnWeights::zeros(d, hidden, 1),
            beta_q1: FfnWeights::zeros(d, hidden, 1),
            beta_q2: FfnWeights::zeros(d, hidden, 1),
            span_start: vec![0.0; 4 * d],
            span_end: vec![0.0; 4 * d],
            num_pool: vec![0.0; 2 * d],
            expr_pool: vec![0.0; 2 * d],
            sign_embed: Matrix::zeros(NUM_SIGNS, 2 * d),
            ffn_type: FfnWeights::zeros(3 * d, hidden, NUM_TYPES),
            ffn_sign: FfnWeights::zeros(5 * d, hidden, NUM_SIGNS),
            ffn_count: FfnWeights::zeros(5 * d, hidden, NUM_COUNT_CLASSES),
            ffn_negation: FfnWeights::zeros(5 * d, hidden, 2),
            ffn_span_count: FfnWeights::zeros(3 * d, hidden, MAX_SPANS),
            ffn_rerank: FfnWeights::zeros(5 * d, hidden, 2),
        }
    }

    pub fn dim(&self) -> usize {
        self.pool_q.len()
    }

    fn ffns(&self) -> [(&'static str, &FfnWeights, usize, usize); 9] {
        let d = self.dim();
        [
            ("beta_q0", &self.beta_q0, d, 1),
            ("beta_q1", &self.beta_q1, d, 1),
            ("beta_q2", &self.beta_q2, d, 1),
            ("ffn.type", &self.ffn_type, 3 * d, NUM_TYPES),
            ("ffn.sign", &self.ffn_sign, 5 * d, NUM_SIGNS),
            ("ffn.count", &self.ffn_count, 5 * d, NUM_COUNT_CLASSES),
            ("ffn.negation", &self.ffn_negation, 5 * d, 2),
            ("ffn.span_count", &self.ffn_span_count, 3 * d, MAX_SPANS),
            ("ffn.rerank", &self.ffn_rerank, 5 * d, 2),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let vectors = [
            ("pool_p.w", self.pool_p.len(), d),
            ("span.start.w", self.span_start.len(), 4 * d),
            ("span.end.w", self.span_end.len(), 4 * d),
            ("num.pool.w", self.num_pool.len(), 2 * d),
            ("expr.pool.w", self.expr_pool.len(), 2 * d),
            ("sign.embed rows", self.sign_embed.rows(), NUM_SIGNS),
            ("sign.embed cols", self.sign_embed.cols(), 2 * d),
        ];
        for (name, got, want) in vectors {
            if got != want {
                return Err(shape_err(name, want, got));
            }
        }
        for (name, f, d_in, d_out) in self.ffns() {
            f.validate()?;
            if f.d_in() != d_in || f.d_out() != d_out {
                return Err(shape_err(
                    name,
                    format!("{d_in}→{d_out}"),
                    format!("{}→{}", f.d_in(), f.d_out()),
                ));
            }
        }
        Ok(())
    }

    pub fn to_store(&self) -> TensorStore {
        let mut s = TensorStore::new();
        s.insert_vector("pool_q.w", &self.pool_q);
        s.insert_vector("pool_p.w", &self.pool_p);
        s.insert_vector("span.start.w", &self.span_start);
        s.insert_vector("span.end.w", &self.span_end);
        s.insert_vector("num.pool.w", &self.num_pool);
        s.insert_vector("expr.pool.w", &self.expr_pool);
        s.insert_matrix("sign.embed", &self.sign_embed);
        for (prefix, f, _, _) in self.ffns() {
            s.insert_matrix(format!("{prefix}.w1"), &f.w1);
            s.insert_vector(format!("{prefix}.b1"), &f.b1);
            s.insert_matrix(format!("{prefix}.w2"), &f.w2);
            s.insert_vector(format!("{prefix}.b2"), &f.b2);
            s.insert_vector(format!("{prefix}.gamma"), &f.gamma);
            s.insert_vector(format!("{prefix}.beta"), &f.beta);
        }
        s.meta.insert("dim".into(), self.dim().into());
        s.meta.insert("type_order".into(), TYPE_ORDER.to_vec().into());
        s.meta.insert("sign_order".into(), SIGN_ORDER.to_vec().into());
        s.meta.insert("negation_order".into(), NEGATION_ORDER.to_vec().into());
        s.meta.insert("rerank_order".into(), RERANK_ORDER.to_vec().into());
        s
    }

    pub fn from_store(s: &TensorStore) -> Result<Self> {
        if let Some(order) = s.meta.get("sign_order") {
            if order != &serde_json::Value::from(SIGN_ORDER.to_vec()) {
                return Err(Error::Config(format!("unsupported sign order {order}")));
            }
        }
        if let Some(order) = s.meta.get("type_order") {
            if order != &serde_json::Value::from(TYPE_ORDER.to_vec()) {
                return Err(Error::Config(format!("unsupported type order {order}")));
            }
        }
        let load_ffn = |prefix: &str| -> Result<FfnWeights> {
            let [w1, b1, w2, b2, gamma, beta] = FFN_PARTS.map(|p| format!("{prefix}.{p}"));
            FfnWeights::new(
                s.matrix(&w1)?,
                s.vector(&b1)?,
                s.matrix(&w2)?,
                s.vector(&b2)?,
                s.vector(&gamma)?,
                s.vector(&beta)?,
            )
        };
        let w = HeadWeights {
            pool_q: s.vector("pool_q.w")?,
            pool_p: s.vector("pool_p.w")?,
            beta_q0: load_ffn("beta_q0")?,
            beta_q1: load_ffn("beta_q1")?,
            beta_q2: load_ffn("beta_q2")?,
            span_start: s.vector("span.start.w")?,
            span_end: s.vector("span.end.w")?,
            num_pool: s.vector("num.pool.w")?,
            expr_pool: s.vector("expr.pool.w")?,
            sign_embed: s.matrix("sign.embed")?,
            ffn_type: load_ffn("ffn.type")?,
            ffn_sign: load_ffn("ffn.sign")?,
            ffn_count: load_ffn("ffn.count")?,
            ffn_negation: load_ffn("ffn.negation")?,
            ffn_span_count: load_ffn("ffn.span_count")?,
            ffn_rerank: load_ffn("ffn.rerank")?,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Self::from_store(&TensorStore::load(dir)?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.to_store().save(dir)
    }
}

/// Question/passage summaries and question gates.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub h_q2: Vec<f64>,
    pub h_p2: Vec<f64>,
    pub h_cls: Vec<f64>,
    pub g_q0: Vec<f64>,
    pub g_q1: Vec<f64>,
    pub g_q2: Vec<f64>,
}

impl Summary {
    /// `[h_q2; h_p2; h_cls]`
    pub fn global(&self) -> Vec<f64> {
        [self.h_q2.as_slice(), &self.h_p2, &self.h_cls].concat()
    }

    fn with_prefix(&self, prefix: &[f64]) -> Vec<f64> {
        [prefix, &self.h_q2, &self.h_p2, &self.h_cls].concat()
    }
}

pub fn summarize(enc: &EncoderOutput, w: &HeadWeights) -> Result<Summary> {
    let question = 1..enc.sep1;
    let passage = enc.sep1 + 1..enc.sep2;
    if question.is_empty() {
        return Err(Error::Empty("question slice"));
    }
    if passage.is_empty() {
        return Err(Error::Empty("passage slice"));
    }
    let [m0, m1, m2, m3] = &enc.layers;
    let q2 = m2.slice_rows(question.clone());
    let (_, h_q2) = attention_pool(&q2, &Scorer::Linear(w.pool_q.clone()))?;
    let (_, h_p2) = attention_pool(&m2.slice_rows(passage), &Scorer::Linear(w.pool_p.clone()))?;
    let (_, g_q0) = attention_pool(&m0.slice_rows(question.clone()), &Scorer::Ffn(w.beta_q0.clone()))?;
    let (_, g_q1) = attention_pool(&m1.slice_rows(question), &Scorer::Ffn(w.beta_q1.clone()))?;
    let (_, g_q2) = attention_pool(&q2, &Scorer::Ffn(w.beta_q2.clone()))?;
    Ok(Summary {
        h_q2,
        h_p2,
        h_cls: m3.row(0).to_vec(),
        g_q0,
        g_q1,
        g_q2,
    })
}

pub fn predict_type(s: &Summary, w: &HeadWeights) -> Result<Vec<f64>> {
    softmax(&ffn(&s.global(), &w.ffn_type)?)
}

fn gated_logit(weights: &[f64], a: &[f64], b: &[f64], ga: &[f64], gb: &[f64]) -> f64 {
    let d = a.len();
    let mut acc = dot(&weights[..d], a) + dot(&weights[d..2 * d], b);
    for i in 0..d {
        acc += weights[2 * d + i] * ga[i] * a[i];
        acc += weights[3 * d + i] * gb[i] * b[i];
    }
    acc
}

/// Start features per token are `[M2; M0; g_q2∘M2; g_q0∘M0]`, end features
/// `[M2; M1; g_q2∘M2; g_q1∘M1]`; marker positions are masked out.
pub fn predict_span_boundaries(enc: &EncoderOutput, s: &Summary, w: &HeadWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = enc.dim();
    if w.span_start.len() != 4 * d || w.span_end.len() != 4 * d {
        return Err(shape_err("span scorers", 4 * d, w.span_start.len()));
    }
    let [m0, m1, m2, _] = &enc.layers;
    let mut start = Vec::with_capacity(enc.len());
    let mut end = Vec::with_capacity(enc.len());
    for t in 0..enc.len() {
        if enc.is_marker(t) {
            start.push(f64::NEG_INFINITY);
            end.push(f64::NEG_INFINITY);
            continue;
        }
        start.push(gated_logit(&w.span_start, m2.row(t), m0.row(t), &s.g_q2, &s.g_q0));
        end.push(gated_logit(&w.span_end, m2.row(t), m1.row(t), &s.g_q2, &s.g_q1));
    }
    Ok((softmax(&start)?, softmax(&end)?))
}

/// Row `i` is `[M2; M3]` at the token of number `i`.
pub fn gather_numbers(enc: &EncoderOutput, numbers: &[NumberMention]) -> Result<Matrix> {
    let d = enc.dim();
    let mut u = Matrix::zeros(numbers.len(), 2 * d);
    for (i, n) in numbers.iter().enumerate() {
        if n.token_index >= enc.len() {
            return Err(Error::OutOfRange {
                context: "number token index",
                index: n.token_index,
                len: enc.len(),
            });
        }
        let row = [enc.layers[2].row(n.token_index), enc.layers[3].row(n.token_index)].concat();
        for (c, v) in row.into_iter().enumerate() {
            u.set(i, c, v);
        }
    }
    Ok(u)
}

pub fn predict_signs(u: &Matrix, s: &Summary, w: &HeadWeights) -> Result<Vec<[f64; 3]>> {
    u.row_iter()
        .map(|row| {
            let p = softmax(&ffn(&s.with_prefix(row), &w.ffn_sign)?)?;
            Ok([p[0], p[1], p[2]])
        })
        .collect()
}

pub fn predict_count(u: &Matrix, s: &Summary, w: &HeadWeights) -> Result<Vec<f64>> {
    let h_u = if u.is_empty() {
        vec![0.0; u.cols()]
    } else {
        attention_pool(u, &Scorer::Linear(w.num_pool.clone()))?.1
    };
    softmax(&ffn(&s.with_prefix(&h_u), &w.ffn_count)?)
}

pub fn predict_negation(u: &Matrix, s: &Summary, w: &HeadWeights) -> Result<Vec<[f64; 2]>> {
    u.row_iter()
        .map(|row| {
            let p = softmax(&ffn(&s.with_prefix(row), &w.ffn_negation)?)?;
            Ok([p[0], p[1]])
        })
        .collect()
}

/// Class `i` encodes `i + 1` spans.
pub fn predict_span_count(s: &Summary, w: &HeadWeights) -> Result<Vec<f64>> {
    softmax(&ffn(&s.global(), &w.ffn_span_count)?)
}

/// Probability that the signed expression is correct. Zero-signed numbers
/// are excluded and at most `max_signed` signed numbers are pooled.
pub fn rerank_score(signs: &[Sign], u: &Matrix, s: &Summary, w: &HeadWeights, max_signed: usize) -> Result<f64> {
    if signs.len() != u.rows() {
        return Err(shape_err("rerank signs", u.rows(), signs.len()));
    }
    let rows: Vec<Vec<f64>> = signs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_nonzero())
        .take(max_signed)
        .map(|(i, sign)| {
            u.row(i)
                .iter()
                .zip(w.sign_embed.row(sign.index()))
                .map(|(v, c)| v + c)
                .collect()
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyExpression);
    }
    let (_, h_v) = attention_pool(&Matrix::from_rows(&rows)?, &Scorer::Linear(w.expr_pool.clone()))?;
    let p = softmax(&ffn(&s.with_prefix(&h_v), &w.ffn_rerank)?)?;
    Ok(p[1])
}

/// Every head distribution for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub summary: Summary,
    pub p_type: Vec<f64>,
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
    pub p_sign: Vec<[f64; 3]>,
    pub p_count: Vec<f64>,
    pub p_negation: Vec<[f64; 2]>,
    pub p_span_count: Vec<f64>,
    /// `N × 2D` number representations.
    pub u: Matrix,
}

impl HeadOutputs {
    pub fn compute(enc: &EncoderOutput, numbers: &[NumberMention], w: &HeadWeights) -> Result<Self> {
        if w.dim() != enc.dim() {
            return Err(shape_err("head weights width", enc.dim(), w.dim()));
        }
        let summary = summarize(enc, w)?;
        let (p_start, p_end) = predict_span_boundaries(enc, &summary, w)?;
        let u = gather_numbers(enc, numbers)?;
        Ok(HeadOutputs {
            p_type: predict_type(&summary, w)?,
            p_sign: predict_signs(&u, &summary, w)?,
            p_count: predict_count(&u, &summary, w)?,
            p_negation: predict_negation(&u, &summary, w)?,
            p_span_count: predict_span_count(&summary, w)?,
            p_start,
            p_end,
            u,
            summary,
        })
    }
}
