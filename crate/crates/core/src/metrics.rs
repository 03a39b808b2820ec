//! Exact match and F1 for answers that may be numbers, dates or sets of
//! spans. Each answer is a bag of normalized entries; bags are aligned
//! one-to-one to maximize total per-entry F1.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::decoder::bag_f1;
use crate::ingest::{DropDataset, GoldAnswer, GoldKind};

/// Largest bag size aligned by enumerating permutations.
pub const EXHAUSTIVE_LIMIT: usize = 8;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Integers print without a fractional part; everything else uses the
/// shortest round-trip form.
pub fn canonical_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        let v = if v == 0.0 { 0.0 } else { v };
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// Optional sign, digits with at most one decimal point; commas ignored.
fn metric_number(token: &str) -> Option<f64> {
    let plain: String = token.chars().filter(|c| *c != ',').collect();
    let body = plain.strip_prefix(['-', '+']).unwrap_or(&plain);
    let digits = body.chars().filter(char::is_ascii_digit).count();
    let dots = body.chars().filter(|c| *c == '.').count();
    if digits == 0 || dots > 1 || digits + dots != body.chars().count() {
        return None;
    }
    plain.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedEntry {
    pub tokens: Vec<String>,
    pub numbers: BTreeSet<String>,
}

impl NormalizedEntry {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined token string, the unit compared by exact match.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

pub fn normalize_answer(text: &str) -> NormalizedEntry {
    let lower = text.to_lowercase();
    let mut entry = NormalizedEntry::default();
    for raw in lower.split(|c: char| c.is_whitespace() || c == '-') {
        let token = match metric_number(raw) {
            Some(v) => canonical_number(v),
            None => {
                let stripped: String = raw.chars().filter(|c| c.is_alphanumeric()).collect();
                match metric_number(&stripped) {
                    Some(v) => canonical_number(v),
                    None => stripped,
                }
            }
        };
        if token.is_empty() || ARTICLES.contains(&token.as_str()) {
            continue;
        }
        if metric_number(&token).is_some() {
            entry.numbers.insert(token.clone());
        }
        entry.tokens.push(token);
    }
    entry
}

/// Bag F1 between two entries, zero when the gold holds numbers and the
/// prediction's number set differs.
pub fn pair_f1(pred: &NormalizedEntry, gold: &NormalizedEntry) -> f64 {
    if !gold.numbers.is_empty() && gold.numbers != pred.numbers {
        return 0.0;
    }
    bag_f1(&pred.tokens, &gold.tokens)
}

pub type AnswerBag = Vec<NormalizedEntry>;

pub fn answer_bag<S: AsRef<str>>(texts: &[S]) -> AnswerBag {
    texts.iter().map(|t| normalize_answer(t.as_ref())).collect()
}

/// Entries a gold answer contributes to its bag.
pub fn gold_bag(gold: &GoldAnswer) -> AnswerBag {
    match gold.kind {
        GoldKind::Number => answer_bag(&gold.texts()),
        GoldKind::Spans => answer_bag(&gold.span_texts),
        GoldKind::Date => gold.date.as_ref().map(|d| answer_bag(&d.parts())).unwrap_or_default(),
    }
}

/// Square `n × n` pair-F1 matrix, the smaller bag padded with empty entries.
pub fn score_matrix(pred: &[NormalizedEntry], gold: &[NormalizedEntry]) -> Vec<Vec<f64>> {
    let n = pred.len().max(gold.len());
    let empty = NormalizedEntry::default();
    (0..n)
        .map(|i| {
            let p = pred.get(i).unwrap_or(&empty);
            (0..n).map(|j| pair_f1(p, gold.get(j).unwrap_or(&empty))).collect()
        })
        .collect()
}

/// Best total over all permutations.
pub fn align_exhaustive(scores: &[Vec<f64>]) -> f64 {
    fn go(scores: &[Vec<f64>], row: usize, used: &mut [bool]) -> f64 {
        if row == scores.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for c in 0..scores.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(scores[row][c] + go(scores, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    if scores.is_empty() {
        return 0.0;
    }
    go(scores, 0, &mut vec![false; scores.len()])
}

/// Best total via the Hungarian algorithm (shortest augmenting paths with
/// potentials) on costs `-score`. Returns `(total, assignment row → col)`.
pub fn align_assignment(scores: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = scores.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let cost = |i: usize, j: usize| -scores[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| scores[i][j]).sum();
    (total, assignment)
}

/// Aligned F1 in `[0, 100]`.
pub fn align_bags(pred: &[NormalizedEntry], gold: &[NormalizedEntry]) -> f64 {
    let n = pred.len().max(gold.len());
    if n == 0 {
        return 100.0;
    }
    let scores = score_matrix(pred, gold);
    let total = if n <= EXHAUSTIVE_LIMIT {
        align_exhaustive(&scores)
    } else {
        align_assignment(&scores).0
    };
    100.0 * total / n as f64
}

fn exact_match(pred: &[NormalizedEntry], gold: &[NormalizedEntry]) -> bool {
    let p: BTreeSet<String> = pred.iter().map(NormalizedEntry::joined).collect();
    let g: BTreeSet<String> = gold.iter().map(NormalizedEntry::joined).collect();
    p == g && pred.len() == gold.len()
}

/// `(em, f1)`: em in `{0, 1}`, f1 in `[0, 100]`, both maximized over golds.
pub fn evaluate_example<S: AsRef<str>>(pred_texts: &[S], golds: &[GoldAnswer]) -> (u8, f64) {
    let pred = answer_bag(pred_texts);
    let mut em = 0;
    let mut f1 = 0.0f64;
    for gold in golds {
        let bag = gold_bag(gold);
        if bag.is_empty() {
            continue;
        }
        if exact_match(&pred, &bag) {
            em = 1;
        }
        f1 = f1.max(align_bags(&pred, &bag));
    }
    (em, f1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoldCategory {
    Number,
    Date,
    SingleSpan,
    MultiSpan,
}

impl GoldCategory {
    pub fn of(gold: &GoldAnswer) -> Self {
        match gold.kind {
            GoldKind::Number => GoldCategory::Number,
            GoldKind::Date => GoldCategory::Date,
            GoldKind::Spans if gold.span_texts.len() > 1 => GoldCategory::MultiSpan,
            GoldKind::Spans => GoldCategory::SingleSpan,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// Percent.
    pub em: f64,
    pub f1: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub em: f64,
    pub f1: f64,
    pub count: usize,
    pub per_type: BTreeMap<GoldCategory, Score>,
}

#[derive(Default)]
struct Acc {
    em: f64,
    f1: f64,
    count: usize,
}

impl Acc {
    fn add(&mut self, em: u8, f1: f64) {
        self.em += em as f64;
        self.f1 += f1;
        self.count += 1;
    }

    fn score(&self) -> Score {
        if self.count == 0 {
            return Score::default();
        }
        Score {
            em: 100.0 * self.em / self.count as f64,
            f1: self.f1 / self.count as f64,
            count: self.count,
        }
    }
}

/// Scores predictions (question id → answer texts) against every question in
/// the dataset; a missing prediction scores zero.
pub fn evaluate_dataset(dataset: &DropDataset, predictions: &HashMap<String, Vec<String>>) -> EvalReport {
    let mut total = Acc::default();
    let mut by_type: BTreeMap<GoldCategory, Acc> = BTreeMap::new();
    for passage in &dataset.passages {
        for q in &passage.questions {
            let (em, f1) = match predictions.get(&q.question_id) {
                Some(pred) => evaluate_example(pred, &q.golds),
                None => (0, 0.0),
            };
            total.add(em, f1);
            if let Some(first) = q.golds.first() {
                by_type.entry(GoldCategory::of(first)).or_default().add(em, f1);
            }
        }
    }
    let s = total.score();
    EvalReport {
        em: s.em,
        f1: s.f1,
        count: s.count,
        per_type: by_type.into_iter().map(|(k, a)| (k, a.score())).collect(),
    }
}
