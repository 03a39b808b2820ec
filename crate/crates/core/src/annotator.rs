//! Weak-supervision search: every labelling of an example that reproduces a
//! gold answer, plus correctness labels for beam candidates and corpus
//! coverage statistics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoder::{evaluate_signs, SignedExpression};
use crate::error::{Error, Result};
use crate::heads::{Sign, MAX_SPANS, NUM_COUNT_CLASSES};
use crate::ingest::{parse_gold_number, parse_number, tokenize, GoldKind, Origin, TokenizedExample};
use crate::metrics::canonical_number;

pub const MAX_TERMS: usize = 3;

/// Numbers match when either the absolute or the relative (to the target)
/// difference is within bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-5, rel: 1e-5 }
    }
}

impl Tolerance {
    pub fn window(&self, target: f64) -> f64 {
        self.abs.max(self.rel * target.abs())
    }

    pub fn close(&self, value: f64, target: f64) -> bool {
        (value - target).abs() <= self.window(target)
    }
}

mod sign_vectors {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::heads::Sign;

    fn to_sign(c: i8) -> Sign {
        match c {
            1 => Sign::Plus,
            -1 => Sign::Minus,
            _ => Sign::Zero,
        }
    }

    pub fn serialize<S: Serializer>(v: &[Vec<Sign>], s: S) -> Result<S::Ok, S::Error> {
        let ints: Vec<Vec<i8>> = v
            .iter()
            .map(|e| e.iter().map(|x| x.coefficient() as i8).collect())
            .collect();
        ints.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<Sign>>, D::Error> {
        let ints = Vec::<Vec<i8>>::deserialize(d)?;
        Ok(ints.into_iter().map(|e| e.into_iter().map(to_sign).collect()).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(default)]
    pub example_id: String,
    /// Inclusive token-index pairs over the full sequence.
    #[serde(default)]
    pub matching_spans: Vec<(usize, usize)>,
    /// One sign per passage number, serialized as `1`, `0`, `-1`.
    #[serde(default, with = "sign_vectors")]
    pub expressions: Vec<Vec<Sign>>,
    #[serde(default)]
    pub count_label: Option<usize>,
    #[serde(default)]
    pub negation_indices: Vec<usize>,
    #[serde(default)]
    pub span_amount: Option<usize>,
}

impl Annotation {
    pub fn is_empty(&self) -> bool {
        self.matching_spans.is_empty()
            && self.expressions.is_empty()
            && self.count_label.is_none()
            && self.negation_indices.is_empty()
    }

    pub fn has(&self, kind: AnnotationKind) -> bool {
        match kind {
            AnnotationKind::Span => !self.matching_spans.is_empty(),
            AnnotationKind::AddSub => !self.expressions.is_empty(),
            AnnotationKind::Count => self.count_label.is_some(),
            AnnotationKind::Negation => !self.negation_indices.is_empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Span,
    AddSub,
    Count,
    Negation,
}

impl AnnotationKind {
    pub const ALL: [AnnotationKind; 4] = [
        AnnotationKind::Span,
        AnnotationKind::AddSub,
        AnnotationKind::Count,
        AnnotationKind::Negation,
    ];
}

impl FromStr for AnnotationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "span" | "spans" => Ok(AnnotationKind::Span),
            "addsub" | "add_sub" | "arith" => Ok(AnnotationKind::AddSub),
            "count" => Ok(AnnotationKind::Count),
            "negation" | "neg" => Ok(AnnotationKind::Negation),
            other => Err(Error::Config(format!("unknown annotation kind `{other}`"))),
        }
    }
}

impl fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotationKind::Span => "span",
            AnnotationKind::AddSub => "addsub",
            AnnotationKind::Count => "count",
            AnnotationKind::Negation => "negation",
        })
    }
}

/// Lowercase, with numeric tokens replaced by their canonical form.
pub fn normalize_token(text: &str) -> String {
    match parse_number(text) {
        Some(v) => canonical_number(v),
        None => text.to_lowercase(),
    }
}

/// Every occurrence of `text` inside one segment, as inclusive token ranges.
pub fn find_text_matches(example: &TokenizedExample, text: &str) -> Vec<(usize, usize)> {
    let needle: Vec<String> = tokenize(text, Origin::Passage)
        .iter()
        .map(|t| normalize_token(&t.text))
        .collect();
    if needle.is_empty() {
        return Vec::new();
    }
    let hay: Vec<String> = example.sequence.iter().map(|t| normalize_token(&t.text)).collect();
    let mut out = Vec::new();
    for range in [example.question_range(), example.passage_range()] {
        if range.len() < needle.len() {
            continue;
        }
        for s in range.start..=range.end - needle.len() {
            if hay[s..s + needle.len()] == needle[..] {
                out.push((s, s + needle.len() - 1));
            }
        }
    }
    out
}

/// All occurrences of any gold text, sorted and deduplicated.
pub fn find_matching_spans<S: AsRef<str>>(example: &TokenizedExample, gold_texts: &[S]) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = gold_texts
        .iter()
        .flat_map(|t| find_text_matches(example, t.as_ref()))
        .collect();
    spans.sort_unstable();
    spans.dedup();
    spans
}

fn sign_vector(n: usize, terms: &[(usize, Sign)]) -> Vec<Sign> {
    let mut v = vec![Sign::Zero; n];
    for (i, s) in terms {
        v[*i] = *s;
    }
    v
}

/// Sign vectors with `1..=max_terms` nonzero entries whose signed sum is
/// within tolerance of `target`. Ordered by term count, then
/// lexicographically with `zero < plus < minus`.
pub fn search_expressions(numbers: &[f64], target: f64, max_terms: usize, tol: Tolerance) -> Vec<Vec<Sign>> {
    if !target.is_finite() {
        return Vec::new();
    }
    let n = numbers.len();
    let signed = [Sign::Plus, Sign::Minus];
    let mut out = Vec::new();

    if max_terms >= 1 {
        let mut found = Vec::new();
        for (i, x) in numbers.iter().enumerate() {
            for s in signed {
                let terms = [(i, s)];
                if tol.close(s.coefficient() * x, target) {
                    found.push(sign_vector(n, &terms));
                }
            }
        }
        found.sort();
        out.extend(found);
    }

    if max_terms >= 2 {
        let mut found = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for si in signed {
                    for sj in signed {
                        let v = si.coefficient() * numbers[i] + sj.coefficient() * numbers[j];
                        if tol.close(v, target) {
                            found.push(sign_vector(n, &[(i, si), (j, sj)]));
                        }
                    }
                }
            }
        }
        found.sort();
        out.extend(found);
    }

    if max_terms >= 3 && n >= 3 {
        // Pair sums plus a lookup for the third value in a sorted index.
        let mut by_value: Vec<(f64, usize)> = numbers.iter().copied().zip(0..).collect();
        by_value.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let window = tol.window(target);
        let mut found = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for si in signed {
                    for sj in signed {
                        let partial = si.coefficient() * numbers[i] + sj.coefficient() * numbers[j];
                        for sk in signed {
                            let want = sk.coefficient() * (target - partial);
                            let slack = window + 1e-9 * (1.0 + want.abs() + partial.abs() + target.abs());
                            let lo = by_value.partition_point(|(v, _)| *v < want - slack);
                            for &(vk, k) in by_value[lo..].iter().take_while(|(v, _)| *v <= want + slack) {
                                if k > j && tol.close(partial + sk.coefficient() * vk, target) {
                                    found.push(sign_vector(n, &[(i, si), (j, sj), (k, sk)]));
                                }
                            }
                        }
                    }
                }
            }
        }
        found.sort();
        out.extend(found);
    }

    // Beyond three terms: plain enumeration by term count.
    for k in 4..=max_terms.min(n) {
        let mut found = Vec::new();
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            for mask in 0..(1u32 << k) {
                let terms: Vec<(usize, Sign)> = idx
                    .iter()
                    .enumerate()
                    .map(|(b, &i)| (i, if mask >> b & 1 == 0 { Sign::Plus } else { Sign::Minus }))
                    .collect();
                let signs = sign_vector(n, &terms);
                if tol.close(evaluate_signs(&signs, numbers), target) {
                    found.push(signs);
                }
            }
            // next combination
            let mut p = k;
            while p > 0 && idx[p - 1] == n - k + p - 1 {
                p -= 1;
            }
            if p == 0 {
                break;
            }
            idx[p - 1] += 1;
            for q in p..k {
                idx[q] = idx[q - 1] + 1;
            }
        }
        found.sort();
        out.extend(found);
    }
    out
}

/// Indices `i` with `100 − numbers[i]` equal to the target.
pub fn search_negations(numbers: &[f64], target: f64, tol: Tolerance) -> Vec<usize> {
    numbers
        .iter()
        .enumerate()
        .filter(|(_, v)| tol.close(100.0 - *v, target))
        .map(|(i, _)| i)
        .collect()
}

/// The gold itself when it is an integer in `0..=9`.
pub fn search_count(gold_text: &str) -> Option<usize> {
    let v = parse_gold_number(gold_text)?;
    (v.fract() == 0.0 && v >= 0.0 && v < NUM_COUNT_CLASSES as f64).then_some(v as usize)
}

pub fn annotate_example(example: &TokenizedExample, tol: Tolerance) -> Annotation {
    let numbers = example.number_values();
    let mut ann = Annotation {
        example_id: example.example_id.clone(),
        ..Annotation::default()
    };
    for gold in &example.golds {
        ann.matching_spans.extend(find_matching_spans(example, &gold.texts()));
        match gold.kind {
            GoldKind::Spans => {
                if ann.span_amount.is_none() {
                    let mut distinct = gold.span_texts.clone();
                    distinct.sort();
                    distinct.dedup();
                    ann.span_amount = Some(distinct.len().clamp(1, MAX_SPANS));
                }
            }
            GoldKind::Number => {
                let Some(text) = gold.number_text.as_deref() else {
                    continue;
                };
                let Some(target) = parse_gold_number(text) else {
                    continue;
                };
                for e in search_expressions(&numbers, target, MAX_TERMS, tol) {
                    if !ann.expressions.contains(&e) {
                        ann.expressions.push(e);
                    }
                }
                ann.negation_indices.extend(search_negations(&numbers, target, tol));
                if ann.count_label.is_none() {
                    ann.count_label = search_count(text);
                }
            }
            GoldKind::Date => {}
        }
    }
    ann.matching_spans.sort_unstable();
    ann.matching_spans.dedup();
    ann.negation_indices.sort_unstable();
    ann.negation_indices.dedup();
    ann
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Wrong,
}

pub fn label_candidates(beam: &[SignedExpression], numbers: &[f64], gold_value: f64, tol: Tolerance) -> Vec<Label> {
    beam.iter()
        .map(|e| {
            if tol.close(e.value(numbers), gold_value) {
                Label::Correct
            } else {
                Label::Wrong
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub kept: usize,
    pub skipped: usize,
    /// Percentage of kept examples; 0 for an empty corpus.
    pub ratio: f64,
}

impl CorpusStats {
    pub fn merge(self, other: CorpusStats) -> CorpusStats {
        let kept = self.kept + other.kept;
        let skipped = self.skipped + other.skipped;
        let total = kept + skipped;
        CorpusStats {
            kept,
            skipped,
            ratio: if total == 0 {
                0.0
            } else {
                kept as f64 / total as f64 * 100.0
            },
        }
    }
}

pub fn corpus_stats(annotations: &[Annotation], kinds: &[AnnotationKind]) -> CorpusStats {
    let kept = annotations.iter().filter(|a| kinds.iter().any(|k| a.has(*k))).count();
    CorpusStats::default().merge(CorpusStats {
        kept,
        skipped: annotations.len() - kept,
        ratio: 0.0,
    })
}

/// Cumulative kind sets in the order span, +add/sub, +count, +negation.
pub fn ablation_configs() -> Vec<Vec<AnnotationKind>> {
    (1..=4).map(|n| AnnotationKind::ALL[..n].to_vec()).collect()
}
