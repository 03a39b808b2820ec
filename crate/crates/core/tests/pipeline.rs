mod common;

use std::collections::HashMap;

use common::{mini_example, mini_examples};
use dropforge::annotator::{annotate_example, label_candidates, Label};
use dropforge::decoder::{beam_search_signs, decode_answer, DecodeConfig, NoRerank};
use dropforge::harness::{gen_encoder_output, oracle_decode, run_selftest, MockConfig, DEFAULT_PRIORITY, MINI_DATASET};
use dropforge::heads::{AnswerType, EncoderOutput, HeadOutputs, Summary};
use dropforge::ingest::{parse_drop_dataset, GoldKind};
use dropforge::metrics::evaluate_dataset;
use dropforge::numerics::Matrix;
use dropforge::store::TensorStore;
use dropforge::{TokenizedExample, Tolerance};

const CENSUS_RECORD: &str = r#"{
  "p1": {
    "passage": "As of the census of 2000, there were 218,590 people, 79,667 households.",
    "qa_pairs": [
      {"question": "Which ancestral groups are at least 10%?", "query_id": "a",
       "answer": {"number": "", "date": {"day": "", "month": "", "year": ""}, "spans": ["German", "Irish"]}},
      {"question": "How many more people than households?", "query_id": "b",
       "answer": {"number": "138923", "date": {"day": "", "month": "", "year": ""}, "spans": []},
       "validated_answers": [{"number": "138,923", "date": {"day": "", "month": "", "year": ""}, "spans": []}]},
      {"question": "Unanswered?", "query_id": "c",
       "answer": {"number": "", "date": {"day": "", "month": "", "year": ""}, "spans": []}}
    ]
  }
}"#;

#[test]
fn parses_census_records() {
    let ds = parse_drop_dataset(CENSUS_RECORD.as_bytes()).unwrap();
    assert_eq!(ds.passages.len(), 1);
    assert_eq!(ds.skipped, 1);
    let qs = &ds.passages[0].questions;
    assert_eq!(qs.len(), 2);
    assert_eq!(qs[0].golds.len(), 1);
    assert_eq!(qs[0].golds[0].kind, GoldKind::Spans);
    assert_eq!(qs[0].golds[0].span_texts, ["German", "Irish"]);
    assert_eq!(qs[1].golds.len(), 2);
}

#[test]
fn malformed_json_reports_an_offset() {
    let err = parse_drop_dataset(b"{\"p\": [").unwrap_err();
    assert!(err.to_string().contains("byte 6"), "{err}");
}

#[test]
fn oracle_round_trip_tolerates_noise() {
    let ds = parse_drop_dataset(MINI_DATASET.as_bytes()).unwrap();
    let examples = mini_examples();
    let cfg = DecodeConfig::default();
    for noise in [0.0, 0.02, 0.05, 0.1] {
        let mock = MockConfig {
            noise_scale: noise,
            ..MockConfig::default()
        };
        let preds: HashMap<String, Vec<String>> = examples
            .iter()
            .map(|ex| {
                let ann = annotate_example(ex, Tolerance::default());
                let p = oracle_decode(ex, &ann, &mock, &DEFAULT_PRIORITY, &cfg);
                (ex.example_id.clone(), p.answer_texts)
            })
            .collect();
        let report = evaluate_dataset(&ds, &preds);
        assert_eq!((report.em, report.f1), (100.0, 100.0), "noise {noise}");
    }
}

#[test]
fn missing_predictions_score_zero() {
    let ds = parse_drop_dataset(MINI_DATASET.as_bytes()).unwrap();
    let report = evaluate_dataset(&ds, &HashMap::new());
    assert_eq!(report.count, 8);
    assert_eq!((report.em, report.f1), (0.0, 0.0));
}

#[test]
fn arithmetic_without_numbers_falls_back_to_spans() {
    let ex = TokenizedExample::new("x", "p", "Who scored?", "Robbie Gould scored twice", vec![], 512).unwrap();
    assert!(ex.numbers.is_empty());
    let t = ex.len();
    let mut p_start = vec![0.0; t];
    let mut p_end = vec![0.0; t];
    p_start[5] = 1.0;
    p_end[6] = 1.0;
    let zeros = vec![0.0; 4];
    let heads = HeadOutputs {
        summary: Summary {
            h_q2: zeros.clone(),
            h_p2: zeros.clone(),
            h_cls: zeros.clone(),
            g_q0: zeros.clone(),
            g_q1: zeros.clone(),
            g_q2: zeros,
        },
        p_type: vec![0.0, 1.0, 0.0, 0.0],
        p_start,
        p_end,
        p_sign: vec![],
        p_count: vec![0.1; 10],
        p_negation: vec![],
        p_span_count: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        u: Matrix::zeros(0, 8),
    };
    let pred = decode_answer(&ex, &heads, &NoRerank, &DecodeConfig::default());
    assert_eq!(pred.answer_type, AnswerType::Span);
    assert_eq!(pred.answer_texts, ["Robbie Gould"]);
    assert!(pred.trace.fallback.is_some());
}

#[test]
fn beam_candidates_are_labelled_against_the_gold() {
    let ex = mini_example("census_2000-q3");
    let numbers = ex.number_values();
    let ann = annotate_example(&ex, Tolerance::default());
    let gold_signs = &ann.expressions[0];
    let p: Vec<[f64; 3]> = gold_signs
        .iter()
        .map(|s| {
            let mut row = [0.1; 3];
            row[s.index()] = 0.8;
            row
        })
        .collect();
    let beam = beam_search_signs(&p, 3, 4);
    let labels = label_candidates(&beam, &numbers, 138923.0, Tolerance::default());
    assert_eq!(labels[0], Label::Correct);
    assert!(labels[1..].iter().all(|l| *l == Label::Wrong));
}

#[test]
fn mock_encoder_survives_the_tensor_store() {
    let ex = mini_example("census_2000-q1");
    let enc = gen_encoder_output(&ex, &MockConfig::default()).unwrap();
    assert_eq!((enc.len(), enc.dim()), (ex.len(), 32));
    let dir = tempfile::tempdir().unwrap();
    enc.to_store().save(dir.path()).unwrap();
    let back = EncoderOutput::from_store(&TensorStore::load(dir.path()).unwrap()).unwrap();
    assert_eq!((back.sep1, back.sep2), (enc.sep1, enc.sep2));
    for (a, b) in back.layers.iter().zip(&enc.layers) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
}

#[test]
fn corrupted_gold_fails_the_selftest() {
    let report = run_selftest(MINI_DATASET.as_bytes(), false).unwrap();
    assert!(report.passed);
    let broken = MINI_DATASET.replace("\"60.1\"", "\"60.2\"");
    let report = run_selftest(broken.as_bytes(), false).unwrap();
    assert!(!report.passed);
    assert!(report.eval.em < 100.0);
}
