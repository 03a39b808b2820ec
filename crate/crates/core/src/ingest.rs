//! Dataset ingestion: DROP-format parsing, offset-preserving tokenization,
//! number-mention extraction and assembly of the marker-delimited sequence
//! `[CLS] question [SEP] passage [SEP]`.
//!
//! All token offsets are counted in Unicode scalar values (`char`s), not bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Question,
    Passage,
    Marker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    #[serde(rename = "start")]
    pub char_start: Option<usize>,
    #[serde(rename = "end")]
    pub char_end: Option<usize>,
    pub origin: Origin,
}

impl Token {
    pub fn marker(text: &str) -> Self {
        Token {
            text: text.to_string(),
            char_start: None,
            char_end: None,
            origin: Origin::Marker,
        }
    }

    pub fn is_marker(&self) -> bool {
        self.origin == Origin::Marker
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumberMention {
    pub value: f64,
    pub token_index: usize,
    pub surface: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldKind {
    Number,
    Date,
    Spans,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateParts {
    pub day: String,
    pub month: String,
    pub year: String,
}

impl DateParts {
    pub fn is_empty(&self) -> bool {
        self.day.is_empty() && self.month.is_empty() && self.year.is_empty()
    }

    /// Non-empty parts in `day, month, year` order.
    pub fn parts(&self) -> Vec<&str> {
        [&self.day, &self.month, &self.year]
            .into_iter()
            .map(String::as_str)
            .filter(|s| !s.is_empty())
            .collect()
    }

    /// Surface form used for span matching, `month day year`.
    pub fn surface(&self) -> String {
        [&self.month, &self.day, &self.year]
            .into_iter()
            .map(String::as_str)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub kind: GoldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<DateParts>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub span_texts: Vec<String>,
}

impl GoldAnswer {
    pub fn number(text: impl Into<String>) -> Self {
        GoldAnswer {
            kind: GoldKind::Number,
            number_text: Some(text.into()),
            date: None,
            span_texts: Vec::new(),
        }
    }

    pub fn spans<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        GoldAnswer {
            kind: GoldKind::Spans,
            number_text: None,
            date: None,
            span_texts: texts.into_iter().map(Into::into).collect(),
        }
    }

    pub fn date(date: DateParts) -> Self {
        GoldAnswer {
            kind: GoldKind::Date,
            number_text: None,
            date: Some(date),
            span_texts: Vec::new(),
        }
    }

    /// Answer strings in the form a prediction would be rendered.
    pub fn texts(&self) -> Vec<String> {
        match self.kind {
            GoldKind::Number => self.number_text.iter().cloned().collect(),
            GoldKind::Spans => self.span_texts.clone(),
            GoldKind::Date => self.date.as_ref().map(|d| vec![d.surface()]).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropQuestion {
    pub question_id: String,
    pub question_text: String,
    pub golds: Vec<GoldAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropPassage {
    pub passage_id: String,
    pub passage_text: String,
    pub questions: Vec<DropQuestion>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DropDataset {
    /// Ordered by passage id.
    pub passages: Vec<DropPassage>,
    /// qa pairs dropped because no answer field was populated.
    pub skipped: usize,
}

impl DropDataset {
    pub fn num_questions(&self) -> usize {
        self.passages.iter().map(|p| p.questions.len()).sum()
    }
}

#[derive(Deserialize)]
struct RawPassage {
    passage: String,
    #[serde(default)]
    qa_pairs: Vec<RawQa>,
}

#[derive(Deserialize)]
struct RawQa {
    question: String,
    #[serde(default)]
    query_id: Option<String>,
    #[serde(default)]
    answer: Option<RawAnswer>,
    #[serde(default)]
    validated_answers: Vec<RawAnswer>,
}

#[derive(Deserialize, Default)]
struct RawAnswer {
    #[serde(default)]
    number: Option<Value>,
    #[serde(default)]
    date: Option<RawDate>,
    #[serde(default)]
    spans: Vec<String>,
}

#[derive(Deserialize, Default)]
struct RawDate {
    #[serde(default)]
    day: Option<Value>,
    #[serde(default)]
    month: Option<Value>,
    #[serde(default)]
    year: Option<Value>,
}

fn value_text(v: &Option<Value>) -> String {
    match v {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Number(n)) => n.to_string(),
        _ => String::new(),
    }
}

impl RawAnswer {
    fn to_gold(&self) -> Option<GoldAnswer> {
        let number = value_text(&self.number);
        if !number.is_empty() {
            return Some(GoldAnswer::number(number));
        }
        let spans: Vec<String> = self
            .spans
            .iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if !spans.is_empty() {
            return Some(GoldAnswer::spans(spans));
        }
        let date = self.date.as_ref().map(|d| DateParts {
            day: value_text(&d.day),
            month: value_text(&d.month),
            year: value_text(&d.year),
        })?;
        (!date.is_empty()).then(|| GoldAnswer::date(date))
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line <= 1 {
        return column.saturating_sub(1);
    }
    let mut seen = 1;
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'\n' {
            seen += 1;
            if seen == line {
                return (i + column).min(bytes.len());
            }
        }
    }
    bytes.len()
}

/// Parses the DROP distribution schema: a map from passage id to
/// `{passage, qa_pairs}`.
pub fn parse_drop_dataset(bytes: &[u8]) -> Result<DropDataset> {
    let raw: BTreeMap<String, RawPassage> = serde_json::from_slice(bytes).map_err(|e| Error::DatasetParse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut skipped = 0;
    let mut passages = Vec::with_capacity(raw.len());
    for (passage_id, rp) in raw {
        let mut questions = Vec::with_capacity(rp.qa_pairs.len());
        for (i, qa) in rp.qa_pairs.into_iter().enumerate() {
            let question_id = qa.query_id.clone().unwrap_or_else(|| format!("{passage_id}-{i}"));
            let Some(primary) = qa.answer.as_ref().and_then(RawAnswer::to_gold) else {
                log::warn!("skipping {question_id}: no populated answer field");
                skipped += 1;
                continue;
            };
            let mut golds = vec![primary];
            golds.extend(qa.validated_answers.iter().filter_map(RawAnswer::to_gold));
            questions.push(DropQuestion {
                question_id,
                question_text: qa.question,
                golds,
            });
        }
        passages.push(DropPassage {
            passage_id,
            passage_text: rp.passage,
            questions,
        });
    }
    Ok(DropDataset { passages, skipped })
}

/// Splits `text` into maximal alphanumeric runs (keeping `,` and `.` between
/// two digits) and single punctuation characters.
pub fn tokenize(text: &str, origin: Origin) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        if c.is_alphanumeric() {
            while j < chars.len() {
                let d = chars[j];
                let digit_joint = (d == ',' || d == '.')
                    && chars[j - 1].is_ascii_digit()
                    && chars.get(j + 1).is_some_and(char::is_ascii_digit);
                if d.is_alphanumeric() || digit_joint {
                    j += 1;
                } else {
                    break;
                }
            }
        }
        tokens.push(Token {
            text: chars[i..j].iter().collect(),
            char_start: Some(i),
            char_end: Some(j),
            origin,
        });
        i = j;
    }
    tokens
}

/// Substring by char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// Parses digits with optional comma grouping and an optional decimal part.
/// `"1,234.5"` → 1234.5; `"1,23"` and `"12a"` → `None`.
pub fn parse_number(text: &str) -> Option<f64> {
    let (int_part, frac_part) = match text.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (text, None),
    };
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    if int_part.is_empty() {
        return None;
    }
    let groups: Vec<&str> = int_part.split(',').collect();
    let grouped_ok = groups.len() == 1
        || (!groups[0].is_empty() && groups[0].len() <= 3 && groups[1..].iter().all(|g| g.len() == 3));
    if !grouped_ok || !groups.iter().all(|g| g.bytes().all(|b| b.is_ascii_digit())) {
        return None;
    }
    let mut plain: String = groups.concat();
    if let Some(f) = frac_part {
        plain.push('.');
        plain.push_str(f);
    }
    plain.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Gold `number` strings: the passage grammar plus an optional sign.
pub fn parse_gold_number(text: &str) -> Option<f64> {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix('-') {
        parse_number(rest).map(|v| -v)
    } else {
        parse_number(t.strip_prefix('+').unwrap_or(t))
    }
}

pub fn extract_numbers(sequence: &[Token]) -> Vec<NumberMention> {
    sequence
        .iter()
        .enumerate()
        .filter(|(_, t)| t.origin == Origin::Passage)
        .filter_map(|(i, t)| {
            parse_number(&t.text).map(|value| NumberMention {
                value,
                token_index: i,
                surface: t.text.clone(),
            })
        })
        .collect()
}

/// `[CLS] question [SEP] passage [SEP]`, dropping trailing passage tokens to
/// fit `max_len`.
pub fn build_sequence(question: &[Token], passage: &[Token], max_len: usize) -> Result<Vec<Token>> {
    if question.is_empty() {
        return Err(Error::Empty("question tokens"));
    }
    if passage.is_empty() {
        return Err(Error::Empty("passage tokens"));
    }
    let limit = max_len.saturating_sub(3);
    if question.len() > limit {
        return Err(Error::QuestionTooLong {
            question_len: question.len(),
            limit,
            max_len,
        });
    }
    let keep = passage.len().min(limit - question.len());
    let mut seq = Vec::with_capacity(question.len() + keep + 3);
    seq.push(Token::marker(CLS));
    seq.extend_from_slice(question);
    seq.push(Token::marker(SEP));
    seq.extend_from_slice(&passage[..keep]);
    seq.push(Token::marker(SEP));
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub example_id: String,
    pub passage_id: String,
    pub question_text: String,
    pub passage_text: String,
    pub sequence: Vec<Token>,
    pub numbers: Vec<NumberMention>,
    pub golds: Vec<GoldAnswer>,
}

impl TokenizedExample {
    pub fn new(
        example_id: impl Into<String>,
        passage_id: impl Into<String>,
        question_text: impl Into<String>,
        passage_text: impl Into<String>,
        golds: Vec<GoldAnswer>,
        max_len: usize,
    ) -> Result<Self> {
        let question_text = question_text.into();
        let passage_text = passage_text.into();
        let q = tokenize(&question_text, Origin::Question);
        let p = tokenize(&passage_text, Origin::Passage);
        let sequence = build_sequence(&q, &p, max_len)?;
        let numbers = extract_numbers(&sequence);
        Ok(TokenizedExample {
            example_id: example_id.into(),
            passage_id: passage_id.into(),
            question_text,
            passage_text,
            sequence,
            numbers,
            golds,
        })
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn sep1(&self) -> usize {
        self.sequence
            .iter()
            .skip(1)
            .position(Token::is_marker)
            .map(|p| p + 1)
            .unwrap_or(0)
    }

    pub fn sep2(&self) -> usize {
        self.sequence.len().saturating_sub(1)
    }

    pub fn question_range(&self) -> std::ops::Range<usize> {
        1..self.sep1()
    }

    pub fn passage_range(&self) -> std::ops::Range<usize> {
        self.sep1() + 1..self.sep2()
    }

    pub fn number_values(&self) -> Vec<f64> {
        self.numbers.iter().map(|n| n.value).collect()
    }

    /// Source text covered by tokens `start..=end`, which must share an origin.
    pub fn surface(&self, start: usize, end: usize) -> String {
        let (first, last) = (&self.sequence[start], &self.sequence[end]);
        let source = match first.origin {
            Origin::Question => &self.question_text,
            Origin::Passage => &self.passage_text,
            Origin::Marker => return first.text.clone(),
        };
        match (first.char_start, last.char_end) {
            (Some(s), Some(e)) => char_slice(source, s, e),
            _ => String::new(),
        }
    }
}

/// Tokenizes every question of the dataset, in passage-id then question order.
pub fn tokenize_dataset(dataset: &DropDataset, max_len: usize) -> Result<Vec<TokenizedExample>> {
    let mut out = Vec::with_capacity(dataset.num_questions());
    for p in &dataset.passages {
        for q in &p.questions {
            out.push(TokenizedExample::new(
                q.question_id.clone(),
                p.passage_id.clone(),
                q.question_text.clone(),
                p.passage_text.clone(),
                q.golds.clone(),
                max_len,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    fn toks(n: usize, origin: Origin) -> Vec<Token> {
        (0..n)
            .map(|i| Token {
                text: format!("w{i}"),
                char_start: Some(i * 3),
                char_end: Some(i * 3 + 2),
                origin,
            })
            .collect()
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("", Origin::Passage).is_empty());
    }

    #[test]
    fn tokenize_grouped_number() {
        let t = tokenize("218,590 people", Origin::Passage);
        assert_eq!(texts(&t), ["218,590", "people"]);
        assert_eq!((t[0].char_start, t[0].char_end), (Some(0), Some(7)));
        assert_eq!((t[1].char_start, t[1].char_end), (Some(8), Some(14)));
    }

    #[test]
    fn tokenize_percent() {
        let t = tokenize("22.5% were", Origin::Passage);
        assert_eq!(texts(&t), ["22.5", "%", "were"]);
    }

    #[test]
    fn tokenize_trailing_comma_is_punctuation() {
        let t = tokenize("census of 2000, there", Origin::Passage);
        assert_eq!(texts(&t), ["census", "of", "2000", ",", "there"]);
        let t = tokenize("U.S. end.", Origin::Passage);
        assert_eq!(texts(&t), ["U", ".", "S", ".", "end", "."]);
    }

    #[test]
    fn tokenize_offsets_are_chars() {
        let text = "café 1,5 ü";
        for t in tokenize(text, Origin::Passage) {
            assert_eq!(char_slice(text, t.char_start.unwrap(), t.char_end.unwrap()), t.text);
        }
    }

    #[test]
    fn number_grammar() {
        assert_eq!(parse_number("1,234.5"), Some(1234.5));
        assert_eq!(parse_number("218,590"), Some(218590.0));
        assert_eq!(parse_number("2000"), Some(2000.0));
        assert_eq!(parse_number("1,23"), None);
        assert_eq!(parse_number("1234,567"), None);
        assert_eq!(parse_number("1."), None);
        assert_eq!(parse_number(".5"), None);
        assert_eq!(parse_number("three"), None);
        assert_eq!(parse_gold_number("-12"), Some(-12.0));
        assert_eq!(parse_gold_number(" 138,923 "), Some(138923.0));
    }

    #[test]
    fn build_sequence_lengths() {
        let q = toks(5, Origin::Question);
        let seq = build_sequence(&q, &toks(10, Origin::Passage), 512).unwrap();
        assert_eq!(seq.len(), 18);
        assert!(seq[0].is_marker() && seq[6].is_marker() && seq[17].is_marker());

        let seq = build_sequence(&q, &toks(600, Origin::Passage), 512).unwrap();
        assert_eq!(seq.len(), 512);
        assert_eq!(seq.iter().filter(|t| t.origin == Origin::Passage).count(), 504);
        assert_eq!(seq[510].text, "w503");
    }

    #[test]
    fn build_sequence_question_too_long() {
        let err = build_sequence(&toks(510, Origin::Question), &toks(3, Origin::Passage), 512);
        assert!(matches!(err, Err(Error::QuestionTooLong { .. })));
        let ok = build_sequence(&toks(509, Origin::Question), &toks(3, Origin::Passage), 512);
        assert_eq!(ok.unwrap().len(), 512);
    }

    #[test]
    fn numbers_only_from_passage() {
        let ex = TokenizedExample::new("q", "p", "Was it 2000?", "In 2000 no digits", vec![], 512).unwrap();
        assert_eq!(ex.numbers.len(), 1);
        assert_eq!(ex.numbers[0].token_index, ex.sep1() + 2);
        let none = TokenizedExample::new("q", "p", "why", "no digits here", vec![], 512).unwrap();
        assert!(none.numbers.is_empty());
    }

    #[test]
    fn parse_empty_map() {
        let ds = parse_drop_dataset(b"{}").unwrap();
        assert!(ds.passages.is_empty());
        assert_eq!(ds.skipped, 0);
    }

    #[test]
    fn parse_validated_answers_become_golds() {
        let json = br#"{"p1": {"passage": "x", "qa_pairs": [
            {"question": "q", "query_id": "a",
             "answer": {"number": "138923", "date": {"day": "", "month": "", "year": ""}, "spans": []},
             "validated_answers": [{"number": "138,923", "date": {"day": "", "month": "", "year": ""}, "spans": []}]}
        ]}}"#;
        let ds = parse_drop_dataset(json).unwrap();
        let golds = &ds.passages[0].questions[0].golds;
        assert_eq!(golds.len(), 2);
        assert_eq!(golds[1].number_text.as_deref(), Some("138,923"));
    }

    #[test]
    fn parse_skips_unanswered() {
        let json = br#"{"p1": {"passage": "x", "qa_pairs": [
            {"question": "q", "query_id": "a", "answer": {"number": "", "date": {"day": "", "month": "", "year": ""}, "spans": []}},
            {"question": "q2", "query_id": "b", "answer": {"number": "", "date": {"day": "3", "month": "May", "year": ""}, "spans": []}}
        ]}}"#;
        let ds = parse_drop_dataset(json).unwrap();
        assert_eq!(ds.skipped, 1);
        assert_eq!(ds.passages[0].questions.len(), 1);
        assert_eq!(ds.passages[0].questions[0].golds[0].kind, GoldKind::Date);
    }

    #[test]
    fn parse_error_has_offset() {
        let err = parse_drop_dataset(b"{\"p\": \n  [}").unwrap_err();
        match err {
            Error::DatasetParse { offset, .. } => assert!((8..=11).contains(&offset), "{offset}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
