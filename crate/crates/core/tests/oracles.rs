//! Formula checks against independently written reference implementations.

use mensx_core::corpus::TaskId;
use mensx_core::evaluation::macro_f1;
use mensx_core::model::{verbalize, Verbalizer};
use mensx_core::retrieval::{bm25_scores, HashedTrigramProvider};
use mensx_core::segmenter::segment_note;
use proptest::prelude::*;

#[test]
fn bm25_single_term_fixture() {
    let segs = segment_note("period pattern regular  blood pressure normal");
    let scores = bm25_scores(&segs, "period", 1.2, 0.75);
    // N=2, n=1: idf = ln((2-1+0.5)/(1+0.5)+1) = ln 2, tf part = 1 at avgdl.
    assert!((scores[0] - 2f64.ln()).abs() <= 1e-12);
    assert_eq!(scores[1], 0.0);
}

fn bm25_reference(docs: &[Vec<&str>], query: &[&str], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
    let mut terms: Vec<&str> = query.to_vec();
    terms.sort();
    terms.dedup();
    docs.iter()
        .map(|d| {
            terms
                .iter()
                .map(|t| {
                    let df = docs.iter().filter(|x| x.contains(t)).count() as f64;
                    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                    let tf = d.iter().filter(|w| *w == t).count() as f64;
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avgdl))
                })
                .sum()
        })
        .collect()
}

#[test]
fn bm25_matches_reference_on_a_small_corpus() {
    let text = "menses regular every month  flow heavy heavy  no dysmenorrhea reported  blood pressure normal";
    let segs = segment_note(text);
    let docs: Vec<Vec<&str>> = segs.iter().map(|s| s.text.split(' ').collect()).collect();
    let query = ["menses", "heavy", "dysmenorrhea", "flow"];
    let expected = bm25_reference(&docs, &query, 1.2, 0.75);
    let got = bm25_scores(&segs, "menses heavy dysmenorrhea flow", 1.2, 0.75);
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() <= 1e-12, "{g} vs {e}");
    }
}

#[test]
fn macro_f1_hand_fixture() {
    let gold = ["regular", "regular", "irregular", "unknown"];
    let pred = ["regular", "irregular", "irregular", "unknown"];
    // F1 per label: regular 2/3, irregular 2/3, unknown 1.
    let hand = (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0;
    assert_eq!(macro_f1(TaskId::Regularity, &gold, &pred).unwrap(), Some(hand));
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn trigram_reference(text: &str, dim: usize) -> Vec<f64> {
    let norm = text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    let chars: Vec<char> = norm.chars().collect();
    let mut v = vec![0.0; dim];
    for w in chars.windows(3) {
        let s: String = w.iter().collect();
        v[(fnv1a(s.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    v
}

/// Softmax over the whole vocabulary, then per-label sums, then
/// renormalization, computed the slow way.
fn verbalize_reference(logits: &[f64], words: &[Vec<usize>]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let mass: Vec<f64> = words.iter().map(|ws| ws.iter().map(|&w| probs[w]).sum()).collect();
    let total: f64 = mass.iter().sum();
    mass.iter().map(|m| m / total).collect()
}

proptest! {
    #[test]
    fn hashed_trigrams_match_fnv_reference(text in "[a-zA-Z \\n\\t.,éü]{0,40}", dim in 1usize..300) {
        let provider = HashedTrigramProvider::new(dim).unwrap();
        prop_assert_eq!(provider.counts(&text), trigram_reference(&text, dim));
    }

    #[test]
    fn verbalize_matches_brute_force(
        logits in prop::collection::vec(-8.0f64..8.0, 10),
        perm in Just((0..10usize).collect::<Vec<_>>()).prop_shuffle(),
        cut in 1usize..6,
    ) {
        // Flow has four labels; give each at least one word and leave the
        // rest of the 10-token vocabulary unused.
        let take = 4 + cut.min(6);
        let mut words = vec![Vec::new(); 4];
        for (i, &w) in perm[..take].iter().enumerate() {
            words[i % 4].push(w);
        }
        let v = Verbalizer { task: TaskId::Flow, words: words.clone() };
        let got = verbalize(&logits, &v).probabilities;
        let expected = verbalize_reference(&logits, &words);
        for (g, e) in got.iter().zip(&expected) {
            prop_assert!((g - e).abs() <= 1e-12, "{} vs {}", g, e);
        }
    }
}
