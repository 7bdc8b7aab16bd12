//! Okapi BM25 over the segments of a single note.
//!
//! score(D) = Σ_t IDF(t) · tf(t,D)·(k1+1) / (tf(t,D) + k1·(1 − b + b·|D|/avgdl))
//! IDF(t)   = ln((N − n_t + 0.5)/(n_t + 0.5) + 1)
//!
//! The collection is the note's own segment list, so N is small and the
//! "+1" form keeps IDF positive.

use std::collections::{BTreeSet, HashMap};

use crate::segmenter::Segment;

/// Lowercase alphanumeric runs. Punctuation is dropped, unlike the prompt
/// tokenizer.
pub fn lexical_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Distinct query terms; multi-word phrases contribute each of their tokens.
pub fn query_terms(query: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    lexical_tokens(query)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

pub fn bm25_scores(segments: &[Segment], query: &str, k1: f64, b: f64) -> Vec<f64> {
    let docs: Vec<Vec<String>> = segments.iter().map(|s| lexical_tokens(&s.text)).collect();
    let refs: Vec<&[String]> = docs.iter().map(Vec::as_slice).collect();
    bm25_scores_tokens(&refs, &query_terms(query), k1, b)
}

pub fn bm25_scores_tokens(docs: &[&[String]], terms: &[String], k1: f64, b: f64) -> Vec<f64> {
    if docs.is_empty() {
        return Vec::new();
    }
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
    let tfs: Vec<HashMap<&str, usize>> = docs
        .iter()
        .map(|d| {
            let mut tf = HashMap::new();
            for t in d.iter() {
                *tf.entry(t.as_str()).or_insert(0) += 1;
            }
            tf
        })
        .collect();
    let idf: Vec<f64> = terms
        .iter()
        .map(|t| {
            let n_t = tfs.iter().filter(|tf| tf.contains_key(t.as_str())).count() as f64;
            ((n - n_t + 0.5) / (n_t + 0.5) + 1.0).ln()
        })
        .collect();

    docs.iter()
        .zip(&tfs)
        .map(|(doc, tf)| {
            let len_norm = 1.0 - b + b * doc.len() as f64 / avgdl;
            terms
                .iter()
                .zip(&idf)
                .map(|(t, idf)| match tf.get(t.as_str()) {
                    Some(&f) => {
                        let f = f as f64;
                        idf * f * (k1 + 1.0) / (f + k1 * len_norm)
                    }
                    None => 0.0,
                })
                .sum()
        })
        .collect()
}
