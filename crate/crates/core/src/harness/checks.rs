//! Seeded property checks run by the self-test. Each check compares the
//! production routine against a brute-force enumeration written here.

use super::{CheckResult, SplitMix64};
use crate::annotator::{search_expressions, Tolerance};
use crate::decoder::{beam_search_signs, nms_multi_span, span_text_f1, top_k_spans, SignedExpression};
use crate::heads::Sign;
use crate::ingest::TokenizedExample;
use crate::metrics::{align_assignment, align_exhaustive, normalize_answer, pair_f1};
use crate::numerics::{attention_pool, gelu, layer_norm, softmax, Matrix, Scorer, LAYER_NORM_EPS};

fn result(name: &str, failures: Vec<String>, trials: usize) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: failures.is_empty(),
        detail: match failures.first() {
            None => format!("({trials} cases)"),
            Some(f) => format!("({} of {trials} failed; first: {f})", failures.len()),
        },
    }
}

fn all_sign_vectors(n: usize) -> Vec<Vec<Sign>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                Sign::ALL.map(|s| {
                    let mut w = v.clone();
                    w.push(s);
                    w
                })
            })
            .collect();
    }
    out
}

fn random_sign_rows(rng: &mut SplitMix64, n: usize, ties: bool) -> Vec<[f64; 3]> {
    const DYADIC: [[f64; 3]; 4] = [
        [0.5, 0.25, 0.25],
        [0.25, 0.5, 0.25],
        [0.25, 0.25, 0.5],
        [0.25, 0.375, 0.375],
    ];
    (0..n)
        .map(|_| {
            if ties {
                DYADIC[rng.below(DYADIC.len())]
            } else {
                let raw = [0.01 + rng.next_f64(), 0.01 + rng.next_f64(), 0.01 + rng.next_f64()];
                let z: f64 = raw.iter().sum();
                raw.map(|x| x / z)
            }
        })
        .collect()
}

fn brute_beam(p: &[[f64; 3]], beam: usize, max_signed: usize) -> Vec<(Vec<Sign>, f64)> {
    let mut all: Vec<(Vec<Sign>, f64)> = all_sign_vectors(p.len())
        .into_iter()
        .filter(|v| {
            let k = v.iter().filter(|s| **s != Sign::Zero).count();
            k >= 1 && k <= max_signed
        })
        .map(|v| {
            let mut prob = 1.0;
            for (row, s) in p.iter().zip(&v) {
                prob *= row[*s as usize];
            }
            (v, prob)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(beam);
    all
}

pub fn beam_exactness(seed: u64, trials: usize) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let mut failures = Vec::new();
    for trial in 0..trials {
        let n = 1 + rng.below(6);
        let beam = [1, 3, 5][rng.below(3)];
        let m = [2, 4, 6][rng.below(3)];
        let p = random_sign_rows(&mut rng, n, trial % 3 == 0);
        let got: Vec<(Vec<Sign>, f64)> = beam_search_signs(&p, beam, m)
            .into_iter()
            .map(|e: SignedExpression| (e.signs, e.cumulative_prob))
            .collect();
        if got != brute_beam(&p, beam, m) {
            failures.push(format!("trial {trial}: n={n} beam={beam} m={m}"));
        }
    }
    result("beam search equals brute force", failures, trials)
}

fn random_example(rng: &mut SplitMix64, id: usize) -> TokenizedExample {
    const VOCAB: [&str; 7] = ["german", "irish", "people", "of", "were", "13.1", "italian"];
    let mut words = |n: usize| -> String {
        (0..n)
            .map(|_| VOCAB[rng.below(VOCAB.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let q = words(2 + id % 4);
    let p = words(5 + id % 25);
    TokenizedExample::new(format!("r{id}"), "p", q, p, vec![], 512).expect("random example")
}

fn random_boundary(rng: &mut SplitMix64, ex: &TokenizedExample) -> Vec<f64> {
    let logits: Vec<f64> = (0..ex.len())
        .map(|i| {
            if ex.sequence[i].is_marker() {
                f64::NEG_INFINITY
            } else {
                4.0 * rng.next_f64()
            }
        })
        .collect();
    softmax(&logits).expect("finite logits")
}

#[allow(clippy::needless_range_loop)]
pub fn nms_invariants(seed: u64, trials: usize) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let mut failures = Vec::new();
    for trial in 0..trials {
        let ex = random_example(&mut rng, trial);
        let ps = random_boundary(&mut rng, &ex);
        let pe = random_boundary(&mut rng, &ex);
        let mut p_count: Vec<f64> = (0..8).map(|_| rng.next_f64()).collect();
        if trial % 4 == 0 {
            p_count = vec![0.0; 8];
            p_count[0] = 1.0;
        }
        let max_len = 1 + rng.below(10);
        let t = crate::decoder::argmax(&p_count).unwrap() + 1;
        let Ok(out) = nms_multi_span(&ps, &pe, &p_count, 20, max_len, &ex) else {
            failures.push(format!("trial {trial}: no spans"));
            continue;
        };
        let disjoint = out
            .iter()
            .enumerate()
            .all(|(i, a)| out[i + 1..].iter().all(|b| span_text_f1(a, b) == 0.0));
        let ordered = out.windows(2).all(|w| w[0].score >= w[1].score);
        let mut ok = disjoint && ordered && out.len() <= t && !out.is_empty();
        if t == 1 {
            let mut best = (f64::NEG_INFINITY, 0, 0);
            for s in 0..ex.len() {
                for e in s..ex.len().min(s + max_len) {
                    let same = ex.sequence[s].origin == ex.sequence[e].origin;
                    let markers = (s..=e).any(|k| ex.sequence[k].is_marker());
                    if same && !markers && ps[s] * pe[e] > best.0 {
                        best = (ps[s] * pe[e], s, e);
                    }
                }
            }
            ok &= (out[0].start, out[0].end) == (best.1, best.2);
            let top = top_k_spans(&ps, &pe, 1, max_len, &ex).map(|v| (v[0].start, v[0].end));
            ok &= top.ok() == Some((best.1, best.2));
        }
        if !ok {
            failures.push(format!("trial {trial}"));
        }
    }
    result("multi-span extraction invariants", failures, trials)
}

fn brute_expressions(numbers: &[f64], target: f64, tol: Tolerance) -> Vec<Vec<Sign>> {
    let mut hits: Vec<Vec<Sign>> = all_sign_vectors(numbers.len())
        .into_iter()
        .filter(|v| {
            let k = v.iter().filter(|s| **s != Sign::Zero).count();
            (1..=3).contains(&k)
        })
        .filter(|v| {
            let mut sum = 0.0;
            for (s, x) in v.iter().zip(numbers) {
                sum += s.coefficient() * x;
            }
            (sum - target).abs() <= tol.abs.max(tol.rel * target.abs())
        })
        .collect();
    hits.sort_by_key(|v| v.iter().filter(|s| **s != Sign::Zero).count());
    // stable sort keeps lexicographic order within each term count
    hits
}

pub fn search_completeness(seed: u64, trials: usize) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let tol = Tolerance::default();
    let mut failures = Vec::new();
    for trial in 0..trials {
        let n = 1 + rng.below(8);
        let numbers: Vec<f64> = (0..n)
            .map(|_| {
                if rng.below(2) == 0 {
                    rng.below(20) as f64
                } else {
                    (rng.below(2000) as f64) / 10.0
                }
            })
            .collect();
        let target = if rng.below(4) == 0 {
            rng.below(50) as f64
        } else {
            let mut t = 0.0;
            for x in &numbers {
                t += [0.0, 1.0, -1.0][rng.below(3)] * x;
            }
            t
        };
        let got = search_expressions(&numbers, target, 3, tol);
        let sound = got.iter().all(|v| {
            let sum: f64 = v.iter().zip(&numbers).map(|(s, x)| s.coefficient() * x).sum();
            (sum - target).abs() <= 1e-5_f64.max(1e-5 * target.abs())
        });
        if !sound || got != brute_expressions(&numbers, target, tol) {
            failures.push(format!("trial {trial}: n={n} target={target}"));
        }
    }
    result("expression search equals enumeration", failures, trials)
}

pub fn kernel_numerics(seed: u64, trials: usize) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let mut failures = Vec::new();
    if gelu(0.0) != 0.0 || (gelu(1.0) - 0.84134).abs() > 1e-4 {
        failures.push("gelu reference values".into());
    }
    for trial in 0..trials {
        let n = 1 + rng.below(16);
        let scale = [1.0, 100.0, 1e4][trial % 3];
        let v: Vec<f64> = (0..n).map(|_| scale * (2.0 * rng.next_f64() - 1.0)).collect();
        let p = softmax(&v).unwrap();
        let shift = 37.5 * (2.0 * rng.next_f64() - 1.0);
        let q = softmax(&v.iter().map(|x| x + shift).collect::<Vec<_>>()).unwrap();
        let sum_ok = (p.iter().sum::<f64>() - 1.0).abs() <= 1e-6 && p.iter().all(|x| *x >= 0.0);
        let shift_ok = p.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 1e-6);

        let w: Vec<f64> = (0..n.max(2)).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
        let ones = vec![1.0; w.len()];
        let zeros = vec![0.0; w.len()];
        let mut ln_ok = true;
        let mean_w = w.iter().sum::<f64>() / w.len() as f64;
        let var_w = w.iter().map(|x| (x - mean_w).powi(2)).sum::<f64>() / w.len() as f64;
        if var_w >= 1e-3 {
            let y = layer_norm(&w, &ones, &zeros, LAYER_NORM_EPS).unwrap();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let var = y.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / y.len() as f64;
            ln_ok = mean.abs() <= 1e-6 && (var - 1.0).abs() <= 1e-4;
        }

        let rows = 1 + rng.below(6);
        let cols = 1 + rng.below(5);
        let x = Matrix::from_fn(rows, cols, |_, _| 4.0 * rng.next_f64() - 2.0);
        let scorer = Scorer::Linear((0..cols).map(|_| 3.0 * rng.next_f64()).collect());
        let (_, h) = attention_pool(&x, &scorer).unwrap();
        let hull_ok = (0..cols).all(|c| {
            let col: Vec<f64> = (0..rows).map(|r| x.get(r, c)).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            h[c] >= lo - 1e-12 && h[c] <= hi + 1e-12
        });
        if !(sum_ok && shift_ok && ln_ok && hull_ok) {
            failures.push(format!(
                "trial {trial}: sum={sum_ok} shift={shift_ok} ln={ln_ok} hull={hull_ok}"
            ));
        }
    }
    result("kernel numerics", failures, trials)
}

pub fn alignment_cross_check(seed: u64, trials: usize) -> CheckResult {
    const WORDS: [&str; 8] = [
        "german",
        "irish people",
        "12",
        "the italian",
        "people",
        "7",
        "german people",
        "13.1",
    ];
    let mut rng = SplitMix64::new(seed);
    let mut failures = Vec::new();
    for trial in 0..trials {
        let n = 1 + rng.below(8);
        let pred: Vec<_> = (0..1 + rng.below(n))
            .map(|_| normalize_answer(WORDS[rng.below(8)]))
            .collect();
        let gold: Vec<_> = (0..n).map(|_| normalize_answer(WORDS[rng.below(8)])).collect();
        let empty = Default::default();
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| pair_f1(pred.get(i).unwrap_or(&empty), &gold[j]))
                    .collect()
            })
            .collect();
        let (hungarian, _) = align_assignment(&scores);
        if (hungarian - align_exhaustive(&scores)).abs() > 1e-9 {
            failures.push(format!("trial {trial}: n={n}"));
        }
    }
    result("alignment: exhaustive equals assignment", failures, trials)
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        beam_exactness(seed, 300),
        nms_invariants(seed ^ 1, 200),
        search_completeness(seed ^ 2, 200),
        kernel_numerics(seed ^ 3, 100),
        alignment_cross_check(seed ^ 4, 100),
    ]
}
