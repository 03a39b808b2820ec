use dropforge::decoder::{beam_search_signs, evaluate_signs};
use dropforge::heads::Sign;
use dropforge::ingest::{char_slice, parse_number, tokenize, Origin};
use dropforge::metrics::normalize_answer;
use dropforge::numerics::softmax;
use dropforge::{evaluate_example, GoldAnswer};
use proptest::prelude::*;

fn sign() -> impl Strategy<Value = Sign> {
    prop_oneof![Just(Sign::Zero), Just(Sign::Plus), Just(Sign::Minus)]
}

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("German".to_string()),
        Just("Irish people".to_string()),
        Just("the Italians".to_string()),
        Just("138,923".to_string()),
        Just("22.5".to_string()),
        Just("field goal".to_string()),
        "[a-z]{1,6}",
    ]
}

proptest! {
    #[test]
    fn tokens_cover_every_non_space_char(text in "[a-zA-Z0-9 ,.%$'-]{0,40}") {
        let tokens = tokenize(&text, Origin::Passage);
        let mut last_end = 0;
        for t in &tokens {
            let (s, e) = (t.char_start.unwrap(), t.char_end.unwrap());
            prop_assert!(s >= last_end && s < e);
            prop_assert_eq!(char_slice(&text, s, e), t.text.clone());
            last_end = e;
        }
        let joined: String = tokens.iter().map(|t| t.text.as_str()).collect();
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        prop_assert_eq!(joined, compact);
    }

    #[test]
    fn grouped_integers_parse(n in 0u64..10_000_000_000) {
        let plain = n.to_string();
        let mut grouped = String::new();
        for (i, c) in plain.chars().enumerate() {
            if i > 0 && (plain.len() - i) % 3 == 0 {
                grouped.push(',');
            }
            grouped.push(c);
        }
        prop_assert_eq!(parse_number(&plain), Some(n as f64));
        prop_assert_eq!(parse_number(&grouped), Some(n as f64));
    }

    #[test]
    fn negating_signs_negates_value(
        pairs in prop::collection::vec((sign(), -1e6f64..1e6), 1..8)
    ) {
        let (signs, numbers): (Vec<Sign>, Vec<f64>) = pairs.into_iter().unzip();
        let flipped: Vec<Sign> = signs.iter().map(|s| s.negated()).collect();
        prop_assert_eq!(evaluate_signs(&signs, &numbers), -evaluate_signs(&flipped, &numbers));
    }

    #[test]
    fn beam_output_is_feasible_and_sorted(
        rows in prop::collection::vec(prop::array::uniform3(0.01f64..1.0), 1..7),
        beam in 1usize..6,
        m in 1usize..7,
    ) {
        let p: Vec<[f64; 3]> = rows.iter().map(|r| { let z: f64 = r.iter().sum(); r.map(|x| x / z) }).collect();
        let out = beam_search_signs(&p, beam, m);
        prop_assert!(!out.is_empty() && out.len() <= beam);
        for e in &out {
            prop_assert!(e.nonzero() >= 1 && e.nonzero() <= m);
        }
        prop_assert!(out.windows(2).all(|w| w[0].cumulative_prob >= w[1].cumulative_prob));
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-500f64..500.0, 1..40)) {
        let p = softmax(&v).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn metric_ignores_prediction_order(
        pred in prop::collection::vec(word(), 1..5),
        gold in prop::collection::vec(word(), 1..5),
    ) {
        let golds = [GoldAnswer::spans(gold)];
        let mut reversed = pred.clone();
        reversed.reverse();
        prop_assert_eq!(evaluate_example(&pred, &golds), evaluate_example(&reversed, &golds));
    }

    #[test]
    fn exact_match_implies_full_f1(
        pred in prop::collection::vec(word(), 1..4),
        gold in prop::collection::vec(word(), 1..4),
    ) {
        let (em, f1) = evaluate_example(&pred, &[GoldAnswer::spans(gold)]);
        prop_assert!(em == 0 || f1 == 100.0);
        prop_assert!((0.0..=100.0).contains(&f1));
    }

    #[test]
    fn self_match_is_perfect(gold in prop::collection::vec(word(), 1..4)) {
        prop_assume!(gold.iter().all(|g| !normalize_answer(g).is_empty()));
        let mut uniq = gold.clone();
        uniq.sort();
        uniq.dedup();
        prop_assert_eq!(evaluate_example(&uniq, &[GoldAnswer::spans(uniq.clone())]), (1, 100.0));
    }
}
