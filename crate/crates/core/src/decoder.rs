//! Answer decoding: type dispatch, multi-span extraction with non-maximum
//! suppression, exact constrained beam search over sign assignments,
//! expression reranking, counting and negation.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{rerank_score, AnswerType, HeadOutputs, HeadWeights, Sign, MAX_SPANS};
use crate::ingest::{Origin, TokenizedExample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_signed: usize,
    pub max_spans: usize,
    pub top_k: usize,
    pub max_span_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 3,
            max_signed: 4,
            max_spans: MAX_SPANS,
            top_k: 20,
            max_span_len: 10,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.max_signed == 0 || self.max_span_len == 0 || self.max_spans == 0 {
            return Err(Error::Config(
                "beam, max-signed, max-spans and max-span-len must be positive".into(),
            ));
        }
        if self.top_k < self.max_spans {
            return Err(Error::Config(format!(
                "top-k ({}) must be at least max-spans ({})",
                self.top_k, self.max_spans
            )));
        }
        Ok(())
    }
}

/// First index of the maximum; NaN-free input assumed.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, x) in v.iter().enumerate() {
        if best.is_none_or(|b| *x > v[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    /// Inclusive token indices into the full sequence.
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub text: String,
    /// Lowercased token texts, the bag used for overlap.
    #[serde(skip)]
    pub tokens: Vec<String>,
}

fn span_order(a: &SpanPrediction, b: &SpanPrediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.cmp(&b.start))
        .then(a.end.cmp(&b.end))
}

/// The `k` best valid spans by `p_start[s] · p_end[e]`, ties broken by
/// position. Valid spans stay inside one segment, avoid markers and are at
/// most `max_len` tokens long.
pub fn top_k_spans(
    p_start: &[f64],
    p_end: &[f64],
    k: usize,
    max_len: usize,
    example: &TokenizedExample,
) -> Result<Vec<SpanPrediction>> {
    let seq = &example.sequence;
    if p_start.len() != seq.len() || p_end.len() != seq.len() {
        return Err(crate::error::shape_err("span distributions", seq.len(), p_start.len()));
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for s in 0..seq.len() {
        let origin = seq[s].origin;
        if origin == Origin::Marker {
            continue;
        }
        for e in s..seq.len().min(s + max_len) {
            if seq[e].origin != origin {
                break;
            }
            candidates.push((p_start[s] * p_end[e], s, e));
        }
    }
    if candidates.is_empty() || k == 0 {
        return Err(Error::NoValidSpan);
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    candidates.truncate(k);
    Ok(candidates
        .into_iter()
        .map(|(score, start, end)| SpanPrediction {
            start,
            end,
            score,
            text: example.surface(start, end),
            tokens: seq[start..=end].iter().map(|t| t.text.to_lowercase()).collect(),
        })
        .collect())
}

/// Bag-of-token F1 between two spans: `2·|A∩B| / (|A|+|B|)`.
pub fn span_text_f1(a: &SpanPrediction, b: &SpanPrediction) -> f64 {
    bag_f1(&a.tokens, &b.tokens)
}

pub(crate) fn bag_f1<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in a {
        *counts.entry(t.as_ref()).or_default() += 1;
    }
    let mut common = 0;
    for t in b {
        if let Some(c) = counts.get_mut(t.as_ref()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Greedy suppression over an already sorted candidate list: keep the best
/// remaining span, drop every remaining span sharing a token with it, stop at
/// `t` spans or when candidates run out.
pub fn suppress(mut candidates: Vec<SpanPrediction>, t: usize) -> Vec<SpanPrediction> {
    let mut kept = Vec::new();
    while !candidates.is_empty() && kept.len() < t {
        let best = candidates.remove(0);
        candidates.retain(|c| span_text_f1(&best, c) <= 0.0);
        kept.push(best);
    }
    kept
}

/// Multi-span extraction: `t = argmax(p_span_count) + 1` spans chosen by
/// non-maximum suppression over the top-`k` candidates.
pub fn nms_multi_span(
    p_start: &[f64],
    p_end: &[f64],
    p_span_count: &[f64],
    k: usize,
    max_len: usize,
    example: &TokenizedExample,
) -> Result<Vec<SpanPrediction>> {
    let t = argmax(p_span_count).ok_or(Error::Empty("span-count distribution"))? + 1;
    let mut candidates = top_k_spans(p_start, p_end, k, max_len, example)?;
    candidates.sort_by(span_order);
    Ok(suppress(candidates, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedExpression {
    pub signs: Vec<Sign>,
    pub cumulative_prob: f64,
}

impl SignedExpression {
    pub fn nonzero(&self) -> usize {
        self.signs.iter().filter(|s| s.is_nonzero()).count()
    }

    pub fn value(&self, numbers: &[f64]) -> f64 {
        evaluate_signs(&self.signs, numbers)
    }
}

/// Probability descending, then sign vectors lexicographically with
/// `zero < plus < minus`.
pub fn expression_order(a: &SignedExpression, b: &SignedExpression) -> Ordering {
    b.cumulative_prob
        .total_cmp(&a.cumulative_prob)
        .then_with(|| a.signs.cmp(&b.signs))
}

/// Exact top-`beam` sign assignments with between 1 and `max_signed` nonzero
/// signs, ranked by the product of per-number sign probabilities.
///
/// One beam is kept per nonzero-count value. Two prefixes with the same count
/// admit the same suffixes, so pruning inside a bucket never discards a
/// prefix of a globally optimal assignment.
pub fn beam_search_signs(p_sign: &[[f64; 3]], beam: usize, max_signed: usize) -> Vec<SignedExpression> {
    if p_sign.is_empty() || beam == 0 || max_signed == 0 {
        return Vec::new();
    }
    let m = max_signed.min(p_sign.len());
    let mut buckets: Vec<Vec<SignedExpression>> = vec![Vec::new(); m + 1];
    buckets[0].push(SignedExpression {
        signs: Vec::new(),
        cumulative_prob: 1.0,
    });
    for row in p_sign {
        let mut next: Vec<Vec<SignedExpression>> = vec![Vec::new(); m + 1];
        for (count, bucket) in buckets.iter().enumerate() {
            for prefix in bucket {
                for sign in Sign::ALL {
                    let c = count + usize::from(sign.is_nonzero());
                    if c > m {
                        continue;
                    }
                    let mut signs = prefix.signs.clone();
                    signs.push(sign);
                    next[c].push(SignedExpression {
                        signs,
                        cumulative_prob: prefix.cumulative_prob * row[sign.index()],
                    });
                }
            }
        }
        for bucket in &mut next {
            bucket.sort_by(expression_order);
            bucket.truncate(beam);
        }
        buckets = next;
    }
    let mut out: Vec<SignedExpression> = buckets.into_iter().skip(1).flatten().collect();
    out.sort_by(expression_order);
    out.truncate(beam);
    out
}

pub fn evaluate_signs(signs: &[Sign], numbers: &[f64]) -> f64 {
    signs.iter().zip(numbers).map(|(s, v)| s.coefficient() * v).sum()
}

pub fn evaluate_expression(e: &SignedExpression, numbers: &[f64]) -> f64 {
    e.value(numbers)
}

/// Index of the candidate maximizing `cumulative_prob · rerank`; earlier
/// beam rank wins ties.
pub fn select_expression(candidates: &[SignedExpression], rerank: &[f64]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Empty("expression candidates"));
    }
    if rerank.len() != candidates.len() {
        return Err(crate::error::shape_err("rerank scores", candidates.len(), rerank.len()));
    }
    let products: Vec<f64> = candidates
        .iter()
        .zip(rerank)
        .map(|(c, r)| c.cumulative_prob * r)
        .collect();
    Ok(argmax(&products).unwrap_or(0))
}

/// `(index, 100 − value)` for the number with the largest negation probability.
pub fn decode_negation(p_negation: &[[f64; 2]], numbers: &[f64]) -> Option<(usize, f64)> {
    let yes: Vec<f64> = p_negation.iter().map(|p| p[1]).collect();
    let i = argmax(&yes)?;
    numbers.get(i).map(|v| (i, 100.0 - v))
}

pub fn decode_count(p_count: &[f64]) -> usize {
    argmax(p_count).unwrap_or(0)
}

/// Integers when within 1e-6 of one, otherwise at most six decimals with
/// trailing zeros trimmed.
pub fn format_number(v: f64) -> String {
    let r = v.round();
    if (v - r).abs() <= 1e-6 {
        let r = if r == 0.0 { 0.0 } else { r };
        return format!("{r:.0}");
    }
    let s = format!("{v:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Scores a candidate sign assignment with the probability it is correct.
pub trait Reranker {
    fn rerank(&self, signs: &[Sign]) -> Result<f64>;
}

impl<F> Reranker for F
where
    F: Fn(&[Sign]) -> Result<f64>,
{
    fn rerank(&self, signs: &[Sign]) -> Result<f64> {
        self(signs)
    }
}

/// Reranking through the learned expression head.
pub struct HeadReranker<'a> {
    pub outputs: &'a HeadOutputs,
    pub weights: &'a HeadWeights,
    pub max_signed: usize,
}

impl Reranker for HeadReranker<'_> {
    fn rerank(&self, signs: &[Sign]) -> Result<f64> {
        rerank_score(
            signs,
            &self.outputs.u,
            &self.outputs.summary,
            self.weights,
            self.max_signed,
        )
    }
}

/// Uniform reranker; selection then follows the beam order.
pub struct NoRerank;

impl Reranker for NoRerank {
    fn rerank(&self, _signs: &[Sign]) -> Result<f64> {
        Ok(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamEntry {
    /// `+1`, `0` or `-1` per passage number.
    pub signs: Vec<i8>,
    pub cumulative_prob: f64,
    pub value: f64,
    pub rerank: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub type_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_count_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beam: Vec<BeamEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_expression: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negation_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerPrediction {
    pub example_id: String,
    pub answer_type: AnswerType,
    pub answer_texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub trace: Trace,
}

fn decode_spans(example: &TokenizedExample, heads: &HeadOutputs, cfg: &DecodeConfig, trace: &mut Trace) -> Vec<String> {
    let limit = cfg.max_spans.min(heads.p_span_count.len());
    trace.span_count_index = argmax(&heads.p_span_count[..limit]);
    match nms_multi_span(
        &heads.p_start,
        &heads.p_end,
        &heads.p_span_count[..limit],
        cfg.top_k,
        cfg.max_span_len,
        example,
    ) {
        Ok(spans) => {
            trace.spans = spans.iter().map(|s| (s.start, s.end, s.score)).collect();
            spans.into_iter().map(|s| s.text).collect()
        }
        Err(e) => {
            trace.error = Some(e.to_string());
            Vec::new()
        }
    }
}

/// Chooses the answer type by `argmax(p_type)` and runs that type's decoder.
/// Arithmetic and negation fall back to span extraction when the passage
/// has no numbers.
pub fn decode_answer(
    example: &TokenizedExample,
    heads: &HeadOutputs,
    reranker: &dyn Reranker,
    cfg: &DecodeConfig,
) -> AnswerPrediction {
    let numbers = example.number_values();
    let type_index = argmax(&heads.p_type).unwrap_or(0);
    let mut answer_type = AnswerType::from_index(type_index).unwrap_or(AnswerType::Span);
    let mut trace = Trace {
        type_index,
        ..Trace::default()
    };
    if matches!(answer_type, AnswerType::AddSub | AnswerType::Negation)
        && (numbers.is_empty() || heads.p_sign.is_empty())
    {
        trace.fallback = Some(format!("{} without numbers; decoded as span", answer_type.name()));
        answer_type = AnswerType::Span;
    }

    let mut value = None;
    let answer_texts = match answer_type {
        AnswerType::Span => decode_spans(example, heads, cfg, &mut trace),
        AnswerType::AddSub => {
            let beam = beam_search_signs(&heads.p_sign, cfg.beam, cfg.max_signed);
            let mut scores = Vec::with_capacity(beam.len());
            for cand in &beam {
                let r = reranker.rerank(&cand.signs).unwrap_or_else(|e| {
                    trace.error = Some(e.to_string());
                    0.0
                });
                scores.push(r);
            }
            trace.beam = beam
                .iter()
                .zip(&scores)
                .map(|(c, r)| BeamEntry {
                    signs: c.signs.iter().map(|s| s.coefficient() as i8).collect(),
                    cumulative_prob: c.cumulative_prob,
                    value: c.value(&numbers),
                    rerank: *r,
                })
                .collect();
            match select_expression(&beam, &scores) {
                Ok(i) => {
                    trace.chosen_expression = Some(i);
                    let v = beam[i].value(&numbers);
                    value = Some(v);
                    vec![format_number(v)]
                }
                Err(e) => {
                    trace.error = Some(e.to_string());
                    Vec::new()
                }
            }
        }
        AnswerType::Count => {
            let c = decode_count(&heads.p_count);
            trace.count_index = Some(c);
            value = Some(c as f64);
            vec![c.to_string()]
        }
        AnswerType::Negation => match decode_negation(&heads.p_negation, &numbers) {
            Some((i, v)) => {
                trace.negation_index = Some(i);
                value = Some(v);
                vec![format_number(v)]
            }
            None => {
                trace.error = Some("negation head has no numbers".into());
                Vec::new()
            }
        },
    };

    AnswerPrediction {
        example_id: example.example_id.clone(),
        answer_type,
        answer_texts,
        value,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(question: &str, passage: &str) -> TokenizedExample {
        TokenizedExample::new("e", "p", question, passage, vec![], 512).unwrap()
    }

    fn point_mass(len: usize, at: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; len];
        for i in at {
            v[*i] = 1.0 / at.len() as f64;
        }
        v
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn point_mass_span() {
        let ex = example("what", "alpha beta gamma");
        let p = point_mass(ex.len(), &[4]);
        let spans = top_k_spans(&p, &p, 5, 10, &ex).unwrap();
        assert_eq!((spans[0].start, spans[0].end, spans[0].score), (4, 4, 1.0));
        assert_eq!(spans[0].text, "beta");
    }

    #[test]
    fn uniform_tie_break_order() {
        // q: "q" → [CLS] q [SEP] a b c [SEP]; 4 valid tokens: 1, 3, 4, 5.
        let ex = example("q", "a b c");
        let mut p = vec![0.0; ex.len()];
        for i in [1, 3, 4, 5] {
            p[i] = 0.25;
        }
        let spans = top_k_spans(&p, &p, 20, 2, &ex).unwrap();
        let got: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
        // every valid span scores 1/16; order by (start, end)
        assert_eq!(got, vec![(1, 1), (3, 3), (3, 4), (4, 4), (4, 5), (5, 5)]);
        let three = top_k_spans(&p, &p, 3, 2, &ex).unwrap();
        assert_eq!(three.len(), 3);
        assert_eq!((three[2].start, three[2].end), (3, 4));
    }

    #[test]
    fn spans_never_cross_segments_or_markers() {
        let ex = example("a b", "c d");
        let p = vec![0.2; ex.len()];
        for s in top_k_spans(&p, &p, 100, 10, &ex).unwrap() {
            assert_eq!(ex.sequence[s.start].origin, ex.sequence[s.end].origin);
            assert!(!ex.sequence[s.start].is_marker());
        }
    }

    #[test]
    fn span_f1_values() {
        let mk = |tokens: &[&str]| SpanPrediction {
            start: 0,
            end: 0,
            score: 0.0,
            text: String::new(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        };
        assert_eq!(span_text_f1(&mk(&["german"]), &mk(&["german"])), 1.0);
        assert_eq!(span_text_f1(&mk(&["german"]), &mk(&["irish"])), 0.0);
        let f = span_text_f1(&mk(&["german", "people"]), &mk(&["people"]));
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nms_drops_overlapping_candidate() {
        // s1 = "x y" (3..=4) beats s2 = "y" (4..=4); s3 = "z" (6..=6) is disjoint.
        let ex = example("q", "x y w z");
        let mut ps = vec![0.0; ex.len()];
        let mut pe = vec![0.0; ex.len()];
        ps[3] = 0.6;
        ps[4] = 0.25;
        ps[6] = 0.15;
        pe[4] = 0.7;
        pe[6] = 0.3;
        let mut p_count = vec![0.0; 8];
        p_count[1] = 1.0;
        let spans = nms_multi_span(&ps, &pe, &p_count, 20, 10, &ex).unwrap();
        let got: Vec<&str> = spans.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(got, ["x y", "z"]);

        p_count = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let one = nms_multi_span(&ps, &pe, &p_count, 20, 10, &ex).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].text, "x y");
    }

    #[test]
    fn beam_single_number() {
        let out = beam_search_signs(&[[0.2, 0.7, 0.1]], 3, 4);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].signs, vec![Sign::Plus]);
        assert!((out[0].cumulative_prob - 0.7).abs() < 1e-12);
        assert_eq!(out[1].signs, vec![Sign::Minus]);
        assert!((out[1].cumulative_prob - 0.1).abs() < 1e-12);
        assert!(beam_search_signs(&[], 3, 4).is_empty());
    }

    #[test]
    fn beam_respects_max_signed() {
        // Unconstrained optimum is (+,+,+); with M=2 a zero must appear.
        let p = [[0.1, 0.8, 0.1], [0.2, 0.7, 0.1], [0.3, 0.6, 0.1]];
        let out = beam_search_signs(&p, 1, 2);
        assert_eq!(out[0].signs, vec![Sign::Plus, Sign::Plus, Sign::Zero]);
        assert!(out.iter().all(|e| e.nonzero() <= 2));
    }

    #[test]
    fn expression_values() {
        let e = |s: Vec<Sign>| SignedExpression {
            signs: s,
            cumulative_prob: 1.0,
        };
        let nums = [218590.0, 79667.0, 2000.0];
        assert_eq!(
            evaluate_expression(&e(vec![Sign::Plus, Sign::Minus, Sign::Zero]), &nums),
            138923.0
        );
        assert_eq!(evaluate_expression(&e(vec![Sign::Plus]), &[22.5]), 22.5);
        assert_eq!(
            evaluate_expression(&e(vec![Sign::Plus, Sign::Plus, Sign::Minus]), &[1.0, 2.0, 3.0]),
            0.0
        );
    }

    #[test]
    fn select_uses_product_and_rank() {
        let c = |p: f64| SignedExpression {
            signs: vec![Sign::Plus],
            cumulative_prob: p,
        };
        assert_eq!(select_expression(&[c(0.6), c(0.3)], &[0.4, 0.9]).unwrap(), 1);
        assert_eq!(select_expression(&[c(0.5), c(0.25)], &[0.5, 1.0]).unwrap(), 0);
        assert_eq!(select_expression(&[c(0.5)], &[0.1]).unwrap(), 0);
        assert!(select_expression(&[], &[]).is_err());
    }

    #[test]
    fn negation_and_count() {
        let p = [[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]];
        assert_eq!(decode_negation(&p, &[5.0, 22.5, 7.0]), Some((1, 77.5)));
        assert_eq!(
            decode_negation(&[[0.0, 1.0]], &[39.9]).map(|x| format_number(x.1)),
            Some("60.1".into())
        );
        assert_eq!(decode_negation(&[[0.0, 1.0]], &[100.0]), Some((0, 0.0)));
        let mut one_hot = vec![0.0; 10];
        one_hot[4] = 1.0;
        assert_eq!(decode_count(&one_hot), 4);
        assert_eq!(decode_count(&[0.1; 10]), 0);
    }

    #[test]
    fn number_rendering() {
        assert_eq!(format_number(138923.0), "138923");
        assert_eq!(format_number(77.5), "77.5");
        assert_eq!(format_number(13.1 + 9.8), "22.9");
        assert_eq!(format_number(-0.0000001), "0");
        assert_eq!(format_number(-4.25), "-4.25");
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig::default().validate().is_ok());
        let bad = DecodeConfig {
            top_k: 4,
            ..DecodeConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
