//! Tokenization, embeddings, similarity, and the embedder registry.
//!
//! Two embedder strategies live behind the [`Embedder`] trait: the built-in
//! deterministic [`reference::ReferenceEmbedder`] (signed feature hashing of
//! token n-grams) and the [`remote::RemoteEmbedder`] HTTP client that fronts
//! real dense retrievers. Select one by name or via
//! [`build_embedder`].

pub mod hashing;
pub mod reference;
pub mod remote;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm tolerance for the `normalized` flag on [`Embedding`].
pub const NORM_TOLERANCE: f32 = 1e-6;

/// An ordered token sequence plus the id of the document or query it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub source_id: String,
}

impl TokenSeq {
    pub fn new(tokens: Vec<String>, source_id: impl Into<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        Self {
            tokens,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Concatenation in argument order, keeping the first source id.
    pub fn concat(parts: &[&TokenSeq]) -> TokenSeq {
        let tokens = parts
            .iter()
            .flat_map(|p| p.tokens.iter().cloned())
            .collect();
        let source_id = parts.first().map_or(String::new(), |p| p.source_id.clone());
        TokenSeq::new(tokens, source_id)
    }

    /// Space-joined text form, e.g. for remote embedding services.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Deterministic tokenization: lowercase, split on Unicode whitespace, strip
/// leading/trailing ASCII punctuation per token, drop empty tokens.
pub fn tokenize(text: &str) -> TokenSeq {
    let tokens = text
        .to_lowercase()
        .split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| c.is_ascii_punctuation()).to_string())
        .filter(|t| !t.is_empty())
        .collect();
    TokenSeq::new(tokens, "")
}

/// Tokenize and tag with a source id.
pub fn tokenize_with_id(text: &str, source_id: impl Into<String>) -> TokenSeq {
    let mut seq = tokenize(text);
    seq.source_id = source_id.into();
    seq
}

/// A fixed-dimension real vector with a declared normalization state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            normalized: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// L2 norm with fixed left-to-right accumulation.
    pub fn l2_norm(&self) -> f32 {
        let mut acc = 0.0f32;
        for &v in &self.values {
            acc += v * v;
        }
        acc.sqrt()
    }

    /// L2-normalized copy; the zero vector passes through unchanged (and is
    /// considered normalized). Idempotent.
    pub fn normalized(&self) -> Embedding {
        if self.is_zero() {
            return Embedding {
                values: self.values.clone(),
                normalized: true,
            };
        }
        if self.normalized {
            return self.clone();
        }
        let norm = self.l2_norm();
        Embedding {
            values: self.values.iter().map(|v| v / norm).collect(),
            normalized: true,
        }
    }

    /// Checks the finiteness and norm-flag invariants.
    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("embedding contains non-finite values"));
        }
        if self.normalized && !self.is_zero() {
            let norm = self.l2_norm();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::usage(format!(
                    "embedding flagged normalized but |norm - 1| = {}",
                    (norm - 1.0).abs()
                )));
            }
        }
        Ok(())
    }
}

/// Exact dot product with fixed left-to-right accumulation.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f32> {
    if a.dim() != b.dim() {
        return Err(Error::usage(format!(
            "similarity dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mut acc = 0.0f32;
    for (x, y) in a.values.iter().zip(&b.values) {
        acc += x * y;
    }
    Ok(acc)
}

/// Similarity flavor: raw inner product (default) or cosine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    #[default]
    Dot,
    Cosine,
}

impl SimilarityKind {
    /// Scores a pair; cosine normalizes both inputs first (zero vectors
    /// score 0 against everything).
    pub fn score(self, a: &Embedding, b: &Embedding) -> Result<f32> {
        match self {
            SimilarityKind::Dot => similarity(a, b),
            SimilarityKind::Cosine => similarity(&a.normalized(), &b.normalized()),
        }
    }
}

/// Which embedder strategy to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Reference,
    Remote,
}

/// Configuration shared by all embedder strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    /// Embedding dimension `n_e`.
    pub dim: usize,
    /// n-gram sizes hashed by the reference embedder.
    pub ngram_orders: BTreeSet<usize>,
    /// Whether fragment embeddings are L2-normalized before pooling.
    pub normalize_fragments: bool,
    /// Similarity flavor used by retrieval.
    pub similarity: SimilarityKind,
    /// Remote service URL (remote kind only).
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub batch_size: usize,
    pub max_retries: u32,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Reference,
            dim: 512,
            ngram_orders: BTreeSet::from([1, 2]),
            normalize_fragments: true,
            similarity: SimilarityKind::Dot,
            endpoint: None,
            timeout_ms: 10_000,
            batch_size: 32,
            max_retries: 3,
        }
    }
}

impl EmbedderConfig {
    /// Reference embedder with the given dimension, other fields default.
    pub fn reference(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    /// Unigram-only reference embedder (exactly additive under concatenation).
    pub fn reference_unigram(dim: usize) -> Self {
        Self {
            dim,
            ngram_orders: BTreeSet::from([1]),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::usage("embedder dim must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::usage("batch_size must be >= 1"));
        }
        if self.ngram_orders.is_empty() {
            return Err(Error::usage("ngram_orders must be nonempty"));
        }
        if self.ngram_orders.iter().any(|&n| n == 0) {
            return Err(Error::usage("ngram orders must be >= 1"));
        }
        if self.kind == EmbedderKind::Remote && self.endpoint.is_none() {
            return Err(Error::usage("remote embedder requires an endpoint"));
        }
        Ok(())
    }

    /// Stable fingerprint of the full config; stored in index headers so a
    /// query-time mismatch can be surfaced as a warning.
    pub fn fingerprint(&self) -> u64 {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hashing::fnv1a64([canonical.as_slice()])
    }
}

/// An embedding model behind a uniform interface.
///
/// Implementations are safe for unrestricted concurrent use and count their
/// invocations (one per sequence embedded) for the cost accounting in
/// experiment reports.
pub trait Embedder: Send + Sync {
    /// Registry name of the strategy.
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn embed_tokens(&self, tokens: &TokenSeq) -> Result<Embedding>;

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        self.embed_tokens(&tokenize(text))
    }

    /// Order-preserving batch embedding.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed_text(t)).collect()
    }

    /// Number of sequences embedded so far.
    fn calls(&self) -> u64;

    /// Resets the invocation counter.
    fn reset_calls(&self);
}

/// Registry constructor: builds the embedder strategy named by the config.
pub fn build_embedder(config: &EmbedderConfig) -> Result<Box<dyn Embedder>> {
    config.validate()?;
    match config.kind {
        EmbedderKind::Reference => Ok(Box::new(reference::ReferenceEmbedder::new(config.clone()))),
        EmbedderKind::Remote => Ok(Box::new(remote::RemoteEmbedder::new(config.clone())?)),
    }
}

/// Names accepted by [`build_embedder`] via [`EmbedderKind`].
pub fn embedder_names() -> &'static [&'static str] {
    &["reference", "remote"]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_and_strips() {
        assert_eq!(
            tokenize("Mount Everest is located").tokens,
            vec!["mount", "everest", "is", "located"]
        );
        assert_eq!(tokenize("").tokens, Vec::<String>::new());
        // Punctuation stripped, case folded, duplicates preserved.
        assert_eq!(
            tokenize("What is RAG?  RAG.").tokens,
            vec!["what", "is", "rag", "rag"]
        );
    }

    #[test]
    fn tokenize_keeps_interior_punctuation() {
        assert_eq!(tokenize("don't stop").tokens, vec!["don't", "stop"]);
        assert_eq!(tokenize("... --- ...").tokens, Vec::<String>::new());
    }

    #[test]
    fn similarity_basis_vectors() {
        let mut e0 = Embedding::zeros(4);
        e0.values[0] = 1.0;
        let mut e1 = Embedding::zeros(4);
        e1.values[1] = 1.0;
        assert_eq!(similarity(&e0, &e0).unwrap(), 1.0);
        assert_eq!(similarity(&e0, &e1).unwrap(), 0.0);
    }

    #[test]
    fn similarity_rejects_dimension_mismatch() {
        let a = Embedding::zeros(3);
        let b = Embedding::zeros(4);
        assert!(matches!(similarity(&a, &b), Err(Error::Usage(_))));
    }

    #[test]
    fn similarity_matches_scalar_loop_oracle() {
        // Independent oracle: plain indexed loop.
        let pairs = [
            (vec![1.0f32, 2.0, -3.0, 0.5], vec![-1.0f32, 0.25, 3.0, 8.0]),
            (vec![0.1, 0.2, 0.3, 0.4], vec![0.4, 0.3, 0.2, 0.1]),
            (vec![-7.5, 2.25, 0.0, 1.0], vec![3.0, -2.0, 9.0, -0.125]),
        ];
        for (a, b) in pairs {
            let mut expect = 0.0f32;
            for i in 0..a.len() {
                expect += a[i] * b[i];
            }
            let got = similarity(&Embedding::new(a), &Embedding::new(b)).unwrap();
            assert_eq!(got.to_bits(), expect.to_bits());
        }
    }

    #[test]
    fn similarity_is_symmetric() {
        let a = Embedding::new(vec![1.5, -2.0, 0.25]);
        let b = Embedding::new(vec![0.5, 4.0, -1.0]);
        assert_eq!(
            similarity(&a, &b).unwrap().to_bits(),
            similarity(&b, &a).unwrap().to_bits()
        );
    }

    #[test]
    fn normalize_is_idempotent_and_zero_safe() {
        let a = Embedding::new(vec![3.0, 4.0]);
        let n1 = a.normalized();
        let n2 = n1.normalized();
        assert_eq!(n1, n2);
        assert!((n1.l2_norm() - 1.0).abs() <= NORM_TOLERANCE);
        n1.validate().unwrap();

        let z = Embedding::zeros(8).normalized();
        assert!(z.normalized && z.is_zero());
        z.validate().unwrap();
    }

    #[test]
    fn cosine_scores_normalize_inputs() {
        let a = Embedding::new(vec![2.0, 0.0]);
        let b = Embedding::new(vec![5.0, 0.0]);
        assert_eq!(SimilarityKind::Dot.score(&a, &b).unwrap(), 10.0);
        assert_eq!(SimilarityKind::Cosine.score(&a, &b).unwrap(), 1.0);
        let zero = Embedding::zeros(2);
        assert_eq!(SimilarityKind::Cosine.score(&a, &zero).unwrap(), 0.0);
    }

    #[test]
    fn config_validation_and_fingerprint() {
        let cfg = EmbedderConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.fingerprint(), EmbedderConfig::default().fingerprint());

        let other = EmbedderConfig::reference(128);
        assert_ne!(cfg.fingerprint(), other.fingerprint());

        let bad = EmbedderConfig {
            dim: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
