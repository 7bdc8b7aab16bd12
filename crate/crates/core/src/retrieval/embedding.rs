//! Embedding providers for the semantic half of hybrid retrieval.

use std::hash::Hasher;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HASH_DIM: usize = 256;
const UNIT_TOLERANCE: f64 = 1e-6;

/// A unit-norm vector, or the zero vector when the text had no features.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub is_zero: bool,
}

impl Embedding {
    /// L2-normalizes `vector`; an all-zero input stays zero and is flagged.
    pub fn normalized(mut vector: Vec<f64>) -> Self {
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Embedding {
                vector,
                is_zero: true,
            };
        }
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            vector.iter_mut().for_each(|x| *x /= norm);
        }
        Embedding {
            vector,
            is_zero: false,
        }
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        if self.is_zero || other.is_zero {
            return 0.0;
        }
        let dot: f64 = self.vector.iter().zip(&other.vector).map(|(a, b)| a * b).sum();
        dot.clamp(-1.0, 1.0)
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Output count equals input count; all vectors share one dimension.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>>;
}

/// Character-trigram feature hashing: lowercase, collapse whitespace, count
/// every 3-character window into bucket `fnv1a64(window) mod dim`.
#[derive(Debug, Clone)]
pub struct HashedTrigramProvider {
    dim: usize,
}

impl HashedTrigramProvider {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        Ok(HashedTrigramProvider { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self, text: &str) -> Vec<f64> {
        let normalized = text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let chars: Vec<char> = normalized.chars().collect();
        let mut counts = vec![0.0; self.dim];
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let mut h = FnvHasher::default();
            h.write(&buf[..len]);
            counts[(h.finish() % self.dim as u64) as usize] += 1.0;
        }
        counts
    }
}

impl Default for HashedTrigramProvider {
    fn default() -> Self {
        HashedTrigramProvider {
            dim: DEFAULT_HASH_DIM,
        }
    }
}

impl EmbeddingProvider for HashedTrigramProvider {
    fn name(&self) -> &str {
        "hash"
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        Ok(texts
            .iter()
            .map(|t| Embedding::normalized(self.counts(t)))
            .collect())
    }
}

#[derive(Serialize)]
pub(crate) struct EmbedRequest<'a> {
    pub texts: &'a [&'a str],
}

#[derive(Serialize, Deserialize)]
pub(crate) struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

/// Client for `POST {base}/embed` with `{"texts": [...]}` returning
/// `{"vectors": [[...]]}`.
pub struct HttpEmbeddingProvider {
    endpoint: String,
    dim: Option<usize>,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(base_url: &str, dim: Option<usize>) -> Self {
        let base = base_url.trim_end_matches('/');
        let endpoint = if base.ends_with("/embed") {
            base.to_string()
        } else {
            format!("{base}/embed")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        HttpEmbeddingProvider {
            endpoint,
            dim,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let fail = |msg: String| Error::Provider(format!("{}: {msg}", self.endpoint));
        let response: EmbedResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { texts })
            .map_err(|e| fail(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| fail(format!("bad response body: {e}")))?;
        if response.vectors.len() != texts.len() {
            return Err(fail(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                response.vectors.len()
            )));
        }
        let dim = self.dim.unwrap_or(response.vectors[0].len());
        if let Some(bad) = response.vectors.iter().position(|v| v.len() != dim) {
            return Err(fail(format!(
                "vector {bad} has dimension {}, expected {dim}",
                response.vectors[bad].len()
            )));
        }
        if response.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(fail("non-finite vector component".into()));
        }
        Ok(response.vectors.into_iter().map(Embedding::normalized).collect())
    }
}

/// Which provider a retrieval run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    Hash { dim: usize },
    Http { url: String, dim: Option<usize> },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Hash {
            dim: DEFAULT_HASH_DIM,
        }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            ProviderConfig::Hash { dim } => Box::new(HashedTrigramProvider::new(*dim)?),
            ProviderConfig::Http { url, dim } => Box::new(HttpEmbeddingProvider::new(url, *dim)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_or_flagged_zero() {
        let p = HashedTrigramProvider::default();
        let out = p.embed(&["period pattern regular", "ab", ""]).unwrap();
        let norm: f64 = out[0].vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6);
        assert!(!out[0].is_zero);
        assert!(out[1].is_zero && out[2].is_zero);
    }

    #[test]
    fn identical_text_has_cosine_one() {
        let p = HashedTrigramProvider::default();
        let out = p.embed(&["Dysmenorrhea Moderate", "dysmenorrhea   moderate"]).unwrap();
        assert!((out[0].cosine(&out[1]) - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn zero_vector_cosine_is_zero() {
        let p = HashedTrigramProvider::default();
        let out = p.embed(&["x", "menses"]).unwrap();
        assert_eq!(out[0].cosine(&out[1]), 0.0);
    }

    #[test]
    fn normalized_leaves_unit_vectors_alone() {
        let v = vec![0.6, 0.8];
        assert_eq!(Embedding::normalized(v.clone()).vector, v);
        assert_eq!(Embedding::normalized(vec![3.0, 4.0]).vector, vec![0.6, 0.8]);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(HashedTrigramProvider::new(0).is_err());
    }

    #[test]
    fn endpoint_building() {
        assert_eq!(
            HttpEmbeddingProvider::new("http://h:1/", None).endpoint(),
            "http://h:1/embed"
        );
        assert_eq!(
            HttpEmbeddingProvider::new("http://h:1/embed", None).endpoint(),
            "http://h:1/embed"
        );
    }
}
