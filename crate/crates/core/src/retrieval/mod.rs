//! Hybrid per-note segment retrieval: BM25 fused with embedding cosine
//! similarity against a fixed query, keeping the top-k segments.

mod bm25;
mod embedding;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ClinicalNote;
use crate::error::{Error, Result};
use crate::prompting::Tokenizer;
use crate::segmenter::{normalize_whitespace, segment_note, Segment};

pub use bm25::{bm25_scores, bm25_scores_tokens, lexical_tokens, query_terms};
pub use embedding::{
    Embedding, EmbeddingProvider, HashedTrigramProvider, HttpEmbeddingProvider, ProviderConfig,
    DEFAULT_HASH_DIM,
};
#[cfg(feature = "mock-server")]
pub(crate) use embedding::EmbedResponse;

pub const DEFAULT_QUERY: &str = "dysmenorrhea, regularity, period pattern, menses, flow volume, \
bleeding pattern, intermenstrual bleeding, spotting";

/// Token budget of the truncation baseline.
pub const TRUNCATION_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub query: String,
    pub k: usize,
    pub alpha: f64,
    pub k1: f64,
    pub b: f64,
    pub provider: ProviderConfig,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            query: DEFAULT_QUERY.to_string(),
            k: 10,
            alpha: 0.5,
            k1: 1.2,
            b: 0.75,
            provider: ProviderConfig::default(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("retrieval: {m}")));
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.k1.is_nan() || self.k1 <= 0.0 {
            return bad("k1 must be positive");
        }
        if !(0.0..=1.0).contains(&self.b) {
            return bad("b must lie in [0, 1]");
        }
        if let ProviderConfig::Hash { dim: 0 } | ProviderConfig::Http { dim: Some(0), .. } =
            self.provider
        {
            return bad("embedding dimension must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedSegment {
    pub segment: Segment,
    pub lexical: f64,
    pub semantic: f64,
    pub fused: f64,
}

/// Cosine similarity of each segment with the query.
pub fn semantic_scores(
    segments: &[Segment],
    query: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<f64>> {
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    let mut texts: Vec<&str> = Vec::with_capacity(segments.len() + 1);
    texts.push(query);
    texts.extend(segments.iter().map(|s| s.text.as_str()));
    let vectors = provider.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::Provider(format!(
            "{}: sent {} texts, received {} vectors",
            provider.name(),
            texts.len(),
            vectors.len()
        )));
    }
    let dim = vectors[0].vector.len();
    if vectors.iter().any(|v| v.vector.len() != dim) {
        return Err(Error::Provider(format!(
            "{}: inconsistent embedding dimensions",
            provider.name()
        )));
    }
    let (query_vec, rest) = vectors.split_first().expect("non-empty");
    Ok(rest.iter().map(|v| v.cosine(query_vec)).collect())
}

fn min_max(scores: &[f64]) -> Vec<f64> {
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

/// Min-max normalizes both score lists within the note, mixes them as
/// `alpha·lexical + (1 − alpha)·semantic`, and sorts by fused score
/// descending with ties going to the earlier segment.
///
/// Returns `(segment index, fused score)` pairs.
pub fn fuse_and_rank(lexical: &[f64], semantic: &[f64], alpha: f64) -> Vec<(usize, f64)> {
    assert_eq!(lexical.len(), semantic.len(), "score lists differ in length");
    let lex = min_max(lexical);
    let sem = min_max(semantic);
    let mut ranked: Vec<(usize, f64)> = lex
        .iter()
        .zip(&sem)
        .map(|(l, s)| alpha * l + (1.0 - alpha) * s)
        .enumerate()
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    /// Selected segments in rank order.
    pub segments: Vec<RankedSegment>,
    /// Selected segments in document order, joined by single spaces.
    pub retrieved_text: String,
    pub tokens_before: usize,
    pub tokens_after: usize,
}

pub fn retrieve(
    note: &ClinicalNote,
    cfg: &RetrievalConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<Retrieval> {
    let tokenizer = Tokenizer;
    let segments = segment_note(&note.text);
    let tokens_before = tokenizer.count(&normalize_whitespace(&note.text));
    let lexical = bm25_scores(&segments, &cfg.query, cfg.k1, cfg.b);
    let semantic = semantic_scores(&segments, &cfg.query, provider)?;
    let ranked = fuse_and_rank(&lexical, &semantic, cfg.alpha);

    let selected: Vec<RankedSegment> = ranked
        .into_iter()
        .take(cfg.k)
        .map(|(i, fused)| RankedSegment {
            segment: segments[i].clone(),
            lexical: lexical[i],
            semantic: semantic[i],
            fused,
        })
        .collect();
    let mut in_order: Vec<&RankedSegment> = selected.iter().collect();
    in_order.sort_by_key(|s| s.segment.ordinal);
    let retrieved_text = in_order
        .iter()
        .map(|s| s.segment.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let tokens_after = tokenizer.count(&retrieved_text);
    Ok(Retrieval {
        segments: selected,
        retrieved_text,
        tokens_before,
        tokens_after,
    })
}

/// Retrieves every note on the current rayon pool; output order follows
/// input order.
pub fn retrieve_all(
    notes: &[ClinicalNote],
    cfg: &RetrievalConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Retrieval>> {
    notes.par_iter().map(|n| retrieve(n, cfg, provider)).collect()
}

/// First `max_tokens` prompt tokens of the whitespace-normalized note.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let normalized = normalize_whitespace(text);
    let spans = Tokenizer.spans(&normalized);
    if spans.len() <= max_tokens {
        return normalized;
    }
    if max_tokens == 0 {
        return String::new();
    }
    normalized[..spans[max_tokens - 1].1].to_string()
}

/// How note text is turned into model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Hybrid retrieval of the top-k segments.
    #[serde(rename = "on")]
    Retrieval,
    /// The whole normalized note.
    #[serde(rename = "off")]
    Full,
    /// The first 512 tokens of the normalized note.
    Truncate,
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(InputMode::Retrieval),
            "off" => Ok(InputMode::Full),
            "truncate" => Ok(InputMode::Truncate),
            other => Err(Error::InvalidConfig(format!(
                "retrieval mode must be on, off or truncate, got '{other}'"
            ))),
        }
    }
}

/// Model input text for every note, in input order.
pub fn prepare_inputs(
    notes: &[ClinicalNote],
    mode: InputMode,
    cfg: &RetrievalConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<String>> {
    match mode {
        InputMode::Retrieval => Ok(retrieve_all(notes, cfg, provider)?
            .into_iter()
            .map(|r| r.retrieved_text)
            .collect()),
        InputMode::Full => Ok(notes.iter().map(|n| normalize_whitespace(&n.text)).collect()),
        InputMode::Truncate => Ok(notes
            .iter()
            .map(|n| truncate_tokens(&n.text, TRUNCATION_TOKENS))
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alpha_one_is_pure_lexical() {
        let lex = [0.3, 2.0, 1.0, 0.0];
        let sem = [0.9, -0.2, 0.1, 0.5];
        let order: Vec<usize> = fuse_and_rank(&lex, &sem, 1.0).iter().map(|r| r.0).collect();
        assert_eq!(order, vec![1, 2, 0, 3]);
        let order: Vec<usize> = fuse_and_rank(&lex, &sem, 0.0).iter().map(|r| r.0).collect();
        assert_eq!(order, vec![0, 3, 2, 1]);
    }

    #[test]
    fn opposed_scores_tie_and_keep_document_order() {
        let ranked = fuse_and_rank(&[2.0, 1.0, 0.0], &[0.0, 1.0, 2.0], 0.5);
        assert_eq!(ranked, vec![(0, 0.5), (1, 0.5), (2, 0.5)]);
    }

    #[test]
    fn constant_scores_normalize_to_zero() {
        let ranked = fuse_and_rank(&[1.0, 1.0], &[0.2, 0.2], 0.5);
        assert_eq!(ranked, vec![(0, 0.0), (1, 0.0)]);
    }

    #[test]
    fn few_segments_are_all_returned_in_document_order() {
        let note = ClinicalNote::new(
            "n",
            "Vitals stable  Period Pattern Regular  Breast exam unremarkable  Dysmenorrhea None",
        );
        let r = retrieve(&note, &RetrievalConfig::default(), &HashedTrigramProvider::default()).unwrap();
        assert_eq!(r.segments.len(), 4);
        assert_eq!(
            r.retrieved_text,
            "Vitals stable Period Pattern Regular Breast exam unremarkable Dysmenorrhea None"
        );
        assert_eq!(r.tokens_before, r.tokens_after);
    }

    #[test]
    fn empty_note() {
        let r = retrieve(
            &ClinicalNote::new("n", ""),
            &RetrievalConfig::default(),
            &HashedTrigramProvider::default(),
        )
        .unwrap();
        assert!(r.segments.is_empty());
        assert_eq!(r.retrieved_text, "");
        assert_eq!((r.tokens_before, r.tokens_after), (0, 0));
    }

    #[test]
    fn top_k_prefers_query_segments() {
        let note = ClinicalNote::new(
            "n",
            "Lungs clear  Heart without murmurs  Period Pattern Irregular  Skin warm  Abdomen soft",
        );
        let cfg = RetrievalConfig {
            k: 1,
            ..RetrievalConfig::default()
        };
        let r = retrieve(&note, &cfg, &HashedTrigramProvider::default()).unwrap();
        assert_eq!(r.retrieved_text, "Period Pattern Irregular");
        assert!(r.tokens_after < r.tokens_before);
    }

    #[test]
    fn unbounded_k_keeps_the_whole_note() {
        let text = "a b  c:  d\n\ne f";
        let cfg = RetrievalConfig {
            k: usize::MAX,
            ..RetrievalConfig::default()
        };
        let r = retrieve(&ClinicalNote::new("n", text), &cfg, &HashedTrigramProvider::default()).unwrap();
        let t = Tokenizer;
        assert_eq!(t.tokenize(&r.retrieved_text), t.tokenize(&normalize_whitespace(text)));
    }

    #[test]
    fn truncation_keeps_prefix_tokens() {
        assert_eq!(truncate_tokens("a b, c  d", 3), "a b,");
        assert_eq!(truncate_tokens("a b", 10), "a b");
        assert_eq!(truncate_tokens("a\nb", 10), "a b");
        assert_eq!(truncate_tokens("a b", 0), "");
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::default().validate().is_ok());
        for cfg in [
            RetrievalConfig { k: 0, ..Default::default() },
            RetrievalConfig { alpha: 1.5, ..Default::default() },
            RetrievalConfig { k1: 0.0, ..Default::default() },
            RetrievalConfig { b: -0.1, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn fusion_is_a_permutation_in_unit_range(
            scores in proptest::collection::vec((0.0f64..10.0, -1.0f64..1.0), 0..12),
            alpha in 0.0f64..=1.0,
        ) {
            let (lex, sem): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
            let ranked = fuse_and_rank(&lex, &sem, alpha);
            let mut idx: Vec<usize> = ranked.iter().map(|r| r.0).collect();
            idx.sort_unstable();
            prop_assert_eq!(idx, (0..lex.len()).collect::<Vec<_>>());
            for (_, f) in &ranked {
                prop_assert!((0.0..=1.0 + 1e-12).contains(f));
            }
        }

        #[test]
        fn lexical_ranking_is_scale_invariant(
            lex in proptest::collection::vec(0.0f64..10.0, 1..12),
            c in 0.01f64..100.0,
        ) {
            let sem = vec![0.0; lex.len()];
            let scaled: Vec<f64> = lex.iter().map(|x| x * c).collect();
            let a: Vec<usize> = fuse_and_rank(&lex, &sem, 1.0).iter().map(|r| r.0).collect();
            let b: Vec<usize> = fuse_and_rank(&scaled, &sem, 1.0).iter().map(|r| r.0).collect();
            prop_assert_eq!(a, b);
        }
    }
}
