//! Model-free end-to-end machinery: a deterministic mock encoder, seeded
//! mock head weights, oracle head distributions built from annotations, and
//! the bundled self-test.
//!
//! Mock values come from splitmix64 (constants `0x9E3779B97F4A7C15`,
//! `0xBF58476D1CE4E5B9`, `0x94D049BB133111EB`) keyed by
//! `(seed, fnv1a64(example_id), matrix, row, col)`:
//!
//! ```text
//! s = mix(seed); s = mix(s ^ fnv1a64(id)); s = mix(s ^ matrix); s = mix(s ^ row); s = mix(s ^ col)
//! value = (s >> 11) · 2^-53 · 2 − 1            // uniform in [−1, 1)
//! ```
//!
//! where `mix(x)` is one splitmix64 output for state `x`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::annotator::{annotate_example, Annotation, AnnotationKind, Tolerance};
use crate::decoder::{decode_answer, AnswerPrediction, DecodeConfig, Reranker};
use crate::error::{Error, Result};
use crate::heads::{
    AnswerType, EncoderOutput, HeadOutputs, HeadWeights, Sign, Summary, MAX_SPANS, NUM_COUNT_CLASSES, NUM_TYPES,
};
use crate::ingest::{
    parse_drop_dataset, parse_gold_number, tokenize_dataset, GoldKind, TokenizedExample, DEFAULT_MAX_LEN,
};
use crate::metrics::{evaluate_dataset, EvalReport};
use crate::numerics::Matrix;
use crate::store::TensorStore;

pub mod checks;

/// Bundled mini-dataset used by [`selftest`].
pub const MINI_DATASET: &str = include_str!("../../data/minidrop.json");

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64 output for state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Maps 64 random bits to `[-1, 1)`.
pub fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
}

pub fn keyed_value(seed: u64, id: &str, matrix: u64, row: u64, col: u64) -> f64 {
    let mut s = splitmix64(seed);
    s = splitmix64(s ^ fnv1a64(id));
    s = splitmix64(s ^ matrix);
    s = splitmix64(s ^ row);
    s = splitmix64(s ^ col);
    unit_interval(s)
}

/// Sequential splitmix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = splitmix64(self.state);
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        out
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    pub seed: u64,
    pub dim: usize,
    pub noise_scale: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            seed: 0,
            dim: 32,
            noise_scale: 0.02,
        }
    }
}

impl MockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::Config(format!("mock width {} < 4", self.dim)));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale < 1.0) {
            return Err(Error::Config(format!(
                "noise scale {} outside [0, 1)",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

/// Deterministic stand-in for the encoder's last four blocks.
pub fn gen_encoder_output(example: &TokenizedExample, cfg: &MockConfig) -> Result<EncoderOutput> {
    cfg.validate()?;
    let t = example.len();
    let layers = [0u64, 1, 2, 3].map(|m| {
        Matrix::from_fn(t, cfg.dim, |r, c| {
            keyed_value(cfg.seed, &example.example_id, m, r as u64, c as u64)
        })
    });
    EncoderOutput::new(layers, example.sep1(), example.sep2())
}

/// Seeded head weights of width `dim`; hidden width equals `dim`.
pub fn mock_head_weights(seed: u64, dim: usize) -> Result<HeadWeights> {
    let template = HeadWeights::zeros(dim, dim).to_store();
    let mut store = TensorStore::new();
    store.meta = template.meta.clone();
    for name in template.names() {
        let t = template.get(name)?;
        let fan_in = t.shape.first().copied().unwrap_or(1).max(1) as f64;
        let scale = if t.shape.len() == 2 { 1.0 / fan_in.sqrt() } else { 0.1 };
        let mut data: Vec<f64> = (0..t.data.len())
            .map(|i| scale * keyed_value(seed, name, 0, i as u64, 0))
            .collect();
        if name.ends_with(".gamma") {
            data.iter_mut().for_each(|v| *v += 1.0);
        }
        store.insert(
            name,
            crate::store::Tensor {
                shape: t.shape.clone(),
                data,
            },
        );
    }
    HeadWeights::from_store(&store)
}

/// Order in which coexisting annotation kinds are preferred by the oracle.
pub const DEFAULT_PRIORITY: [AnnotationKind; 4] = [
    AnnotationKind::AddSub,
    AnnotationKind::Negation,
    AnnotationKind::Count,
    AnnotationKind::Span,
];

fn answer_type_of(kind: AnnotationKind) -> AnswerType {
    match kind {
        AnnotationKind::Span => AnswerType::Span,
        AnnotationKind::AddSub => AnswerType::AddSub,
        AnnotationKind::Count => AnswerType::Count,
        AnnotationKind::Negation => AnswerType::Negation,
    }
}

/// `1 − noise` at `peak`, the rest spread evenly.
fn peaked(len: usize, peak: usize, noise: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let rest = noise / (len - 1) as f64;
    (0..len).map(|i| if i == peak { 1.0 - noise } else { rest }).collect()
}

/// Equal mass on `peaks`, `noise` spread over the other non-marker positions,
/// zero on markers.
fn boundary_distribution(example: &TokenizedExample, peaks: &[usize], noise: f64) -> Vec<f64> {
    let open: Vec<usize> = (0..example.len())
        .filter(|i| !example.sequence[*i].is_marker() && !peaks.contains(i))
        .collect();
    let mut p = vec![0.0; example.len()];
    let noise = if open.is_empty() { 0.0 } else { noise };
    if peaks.is_empty() {
        let n = open.len().max(1) as f64;
        for i in &open {
            p[*i] = 1.0 / n;
        }
        return p;
    }
    for i in peaks {
        p[*i] += (1.0 - noise) / peaks.len() as f64;
    }
    for i in &open {
        p[*i] = noise / open.len() as f64;
    }
    p
}

/// Spans the oracle aims at: one non-overlapping occurrence per distinct
/// gold text when possible, otherwise the first matching span.
pub fn oracle_spans(example: &TokenizedExample, ann: &Annotation) -> Vec<(usize, usize)> {
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    if let Some(gold) = example.golds.iter().find(|g| g.kind == GoldKind::Spans) {
        let mut seen = Vec::new();
        for text in &gold.span_texts {
            if seen.contains(text) {
                continue;
            }
            seen.push(text.clone());
            let hit = crate::annotator::find_text_matches(example, text)
                .into_iter()
                .find(|(s, e)| chosen.iter().all(|(cs, ce)| e < cs || s > ce));
            if let Some(h) = hit {
                chosen.push(h);
            }
        }
    }
    if chosen.is_empty() {
        chosen.extend(ann.matching_spans.first().copied());
    }
    chosen.truncate(MAX_SPANS);
    chosen.sort_unstable();
    chosen
}

/// Near-one-hot head outputs consistent with the first annotation kind in
/// `priority` that `ann` supports.
pub fn oracle_head_outputs(
    example: &TokenizedExample,
    ann: &Annotation,
    cfg: &MockConfig,
    priority: &[AnnotationKind],
) -> Result<HeadOutputs> {
    cfg.validate()?;
    let kind = priority
        .iter()
        .copied()
        .find(|k| ann.has(*k))
        .ok_or(Error::EmptyAnnotation)?;
    let noise = cfg.noise_scale;
    let n = example.numbers.len();

    let spans = oracle_spans(example, ann);
    let starts: Vec<usize> = spans.iter().map(|s| s.0).collect();
    let ends: Vec<usize> = spans.iter().map(|s| s.1).collect();
    let amount = if kind == AnnotationKind::Span {
        spans.len().max(1)
    } else {
        1
    };

    let expression = ann.expressions.first();
    let p_sign = (0..n)
        .map(|i| {
            let sign = expression.map_or(Sign::Zero, |e| e[i]);
            let p = peaked(3, sign.index(), noise);
            [p[0], p[1], p[2]]
        })
        .collect();
    let negated = ann.negation_indices.first().copied();
    let p_negation = (0..n)
        .map(|i| {
            let p = peaked(2, usize::from(Some(i) == negated), noise);
            [p[0], p[1]]
        })
        .collect();

    let zeros = vec![0.0; cfg.dim];
    Ok(HeadOutputs {
        summary: Summary {
            h_q2: zeros.clone(),
            h_p2: zeros.clone(),
            h_cls: zeros.clone(),
            g_q0: zeros.clone(),
            g_q1: zeros.clone(),
            g_q2: zeros,
        },
        p_type: peaked(NUM_TYPES, answer_type_of(kind).index(), noise),
        p_start: boundary_distribution(example, &starts, noise),
        p_end: boundary_distribution(example, &ends, noise),
        p_sign,
        p_count: peaked(NUM_COUNT_CLASSES, ann.count_label.unwrap_or(0), noise),
        p_negation,
        p_span_count: peaked(MAX_SPANS, amount - 1, noise),
        u: Matrix::zeros(n, 2 * cfg.dim),
    })
}

/// Scores candidates high when they evaluate to a numeric gold.
pub struct OracleReranker {
    numbers: Vec<f64>,
    targets: Vec<f64>,
    noise: f64,
    tol: Tolerance,
}

impl OracleReranker {
    pub fn new(example: &TokenizedExample, noise: f64) -> Self {
        OracleReranker {
            numbers: example.number_values(),
            targets: example
                .golds
                .iter()
                .filter_map(|g| g.number_text.as_deref().and_then(parse_gold_number))
                .collect(),
            noise,
            tol: Tolerance::default(),
        }
    }
}

impl Reranker for OracleReranker {
    fn rerank(&self, signs: &[Sign]) -> Result<f64> {
        let v = crate::decoder::evaluate_signs(signs, &self.numbers);
        let hit = self.targets.iter().any(|t| self.tol.close(v, *t));
        Ok(if hit {
            1.0 - self.noise
        } else {
            self.noise.max(f64::MIN_POSITIVE)
        })
    }
}

/// Decodes from oracle distributions; an example without annotation gets an
/// empty span prediction.
pub fn oracle_decode(
    example: &TokenizedExample,
    ann: &Annotation,
    mock: &MockConfig,
    priority: &[AnnotationKind],
    cfg: &DecodeConfig,
) -> AnswerPrediction {
    match oracle_head_outputs(example, ann, mock, priority) {
        Ok(heads) => decode_answer(example, &heads, &OracleReranker::new(example, mock.noise_scale), cfg),
        Err(e) => AnswerPrediction {
            example_id: example.example_id.clone(),
            answer_type: AnswerType::Span,
            answer_texts: Vec::new(),
            value: None,
            trace: crate::decoder::Trace {
                error: Some(e.to_string()),
                ..Default::default()
            },
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub examples: usize,
    pub annotated: usize,
    pub eval: EvalReport,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl SelftestReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "examples: {}  annotated: {}\nEM {:.1}  F1 {:.1}\n",
            self.examples, self.annotated, self.eval.em, self.eval.f1
        );
        for c in &self.checks {
            out.push_str(&format!(
                "[{}] {} {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        out.push_str(if self.passed {
            "selftest passed\n"
        } else {
            "selftest FAILED\n"
        });
        out
    }
}

/// annotate → oracle → decode → eval over a DROP-format dataset, plus the
/// property checks when `with_checks` is set.
pub fn run_selftest(dataset_json: &[u8], with_checks: bool) -> Result<SelftestReport> {
    let dataset = parse_drop_dataset(dataset_json)?;
    let examples = tokenize_dataset(&dataset, DEFAULT_MAX_LEN)?;
    let mock = MockConfig::default();
    let cfg = DecodeConfig::default();
    let tol = Tolerance::default();
    let mut annotated = 0;
    let mut predictions = HashMap::new();
    for ex in &examples {
        let ann = annotate_example(ex, tol);
        annotated += usize::from(!ann.is_empty());
        let pred = oracle_decode(ex, &ann, &mock, &DEFAULT_PRIORITY, &cfg);
        predictions.insert(ex.example_id.clone(), pred.answer_texts);
    }
    let eval = evaluate_dataset(&dataset, &predictions);
    let checks = if with_checks {
        checks::run_all(0x5eed)
    } else {
        Vec::new()
    };
    let perfect = eval.count == 0 || (eval.em == 100.0 && eval.f1 == 100.0);
    let passed = perfect && checks.iter().all(|c| c.passed);
    Ok(SelftestReport {
        examples: examples.len(),
        annotated,
        eval,
        checks,
        passed,
    })
}

pub fn selftest() -> Result<SelftestReport> {
    run_selftest(MINI_DATASET.as_bytes(), true)
}
