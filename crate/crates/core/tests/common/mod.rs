//! Brute-force reference implementations shared by the integration tests.
//! None of these call into the routines they are used to check.

#![allow(dead_code)]

use dropforge::heads::Sign;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sign_of(i: usize) -> Sign {
    [Sign::Zero, Sign::Plus, Sign::Minus][i]
}

fn coefficient(i: usize) -> f64 {
    [0.0, 1.0, -1.0][i]
}

/// Every vector in {0,1,2}^n, in lexicographic order.
pub fn index_vectors(n: usize) -> Vec<Vec<usize>> {
    let total = 3usize.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut v = vec![0; n];
            for slot in v.iter_mut().rev() {
                *slot = code % 3;
                code /= 3;
            }
            v
        })
        .collect()
}

/// Top `beam` feasible sign vectors by probability product, ties by
/// lexicographic index order.
pub fn brute_beam(p: &[[f64; 3]], beam: usize, max_signed: usize) -> Vec<(Vec<Sign>, f64)> {
    let mut all: Vec<(Vec<usize>, f64)> = index_vectors(p.len())
        .into_iter()
        .filter(|v| {
            let k = v.iter().filter(|i| **i != 0).count();
            k >= 1 && k <= max_signed
        })
        .map(|v| {
            let prob = v.iter().zip(p).fold(1.0, |acc, (i, row)| acc * row[*i]);
            (v, prob)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.into_iter()
        .take(beam)
        .map(|(v, prob)| (v.into_iter().map(sign_of).collect(), prob))
        .collect()
}

/// All 1..=3-term sign vectors within tolerance of `target`, grouped by term
/// count and lexicographic inside each group.
pub fn brute_expressions(numbers: &[f64], target: f64) -> Vec<Vec<Sign>> {
    let window = 1e-5_f64.max(1e-5 * target.abs());
    let mut hits: Vec<(usize, Vec<usize>)> = index_vectors(numbers.len())
        .into_iter()
        .filter_map(|v| {
            let k = v.iter().filter(|i| **i != 0).count();
            if !(1..=3).contains(&k) {
                return None;
            }
            let sum: f64 = v.iter().zip(numbers).map(|(i, x)| coefficient(*i) * x).sum();
            ((sum - target).abs() <= window).then_some((k, v))
        })
        .collect();
    hits.sort();
    hits.into_iter()
        .map(|(_, v)| v.into_iter().map(sign_of).collect())
        .collect()
}

/// Best permutation score of a square matrix, enumerated with Heap's
/// algorithm.
pub fn best_permutation(scores: &[Vec<f64>]) -> f64 {
    let n = scores.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let value = |perm: &[usize]| -> f64 { perm.iter().enumerate().map(|(i, j)| scores[i][*j]).sum() };
    let mut best = value(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.max(value(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// A random distribution with strictly positive entries.
pub fn random_dist<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// Rows drawn from a small dyadic set so that many sign vectors share the
/// exact same probability product.
pub fn tie_rows<R: Rng>(rng: &mut R, n: usize) -> Vec<[f64; 3]> {
    const ROWS: [[f64; 3]; 5] = [
        [0.5, 0.25, 0.25],
        [0.25, 0.5, 0.25],
        [0.25, 0.25, 0.5],
        [0.5, 0.5, 0.0],
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    ];
    (0..n).map(|_| ROWS[rng.gen_range(0..ROWS.len())]).collect()
}

pub fn mini_examples() -> Vec<dropforge::TokenizedExample> {
    let ds = dropforge::ingest::parse_drop_dataset(dropforge::harness::MINI_DATASET.as_bytes()).unwrap();
    dropforge::ingest::tokenize_dataset(&ds, dropforge::ingest::DEFAULT_MAX_LEN).unwrap()
}

pub fn mini_example(id: &str) -> dropforge::TokenizedExample {
    mini_examples()
        .into_iter()
        .find(|e| e.example_id == id)
        .unwrap_or_else(|| panic!("no example {id}"))
}
