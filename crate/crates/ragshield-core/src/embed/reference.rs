//! Deterministic built-in embedding model: signed feature hashing of token
//! n-grams.
//!
//! Stands in for neural dense retrievers so attacks and defenses can be
//! verified against exact oracles. For each n-gram `g` of each configured
//! order, `values[H_idx(g) mod dim] += sign(g)` with a fixed left-to-right
//! accumulation (ascending order first, then window position). Outputs are
//! bit-exact across platforms; see [`super::hashing`] for the hash contract.
//!
//! Analytic property used throughout the test oracles: before normalization,
//! `embed(A ⊕ B) = embed(A) + embed(B)` up to the boundary n-grams spanning
//! the seam — with `ngram_orders = {1}` the additivity is exact.

use std::sync::atomic::{AtomicU64, Ordering};

use super::hashing::ngram_slot;
use super::{Embedder, EmbedderConfig, Embedding, TokenSeq};
use crate::error::Result;

/// Pure hashed bag-of-n-grams embedding; empty input yields the zero vector.
/// The result is never flagged normalized — normalization is a separate
/// contract applied by callers.
pub fn embed_reference(tokens: &TokenSeq, config: &EmbedderConfig) -> Embedding {
    let mut values = vec![0.0f32; config.dim];
    // BTreeSet iterates orders ascending; windows run left to right.
    for &order in &config.ngram_orders {
        if order == 0 || tokens.len() < order {
            continue;
        }
        let toks: Vec<&str> = tokens.tokens.iter().map(String::as_str).collect();
        for window in toks.windows(order) {
            let (idx, sign) = ngram_slot(window, config.dim);
            values[idx] += sign;
        }
    }
    Embedding::new(values)
}

/// The built-in reference embedder strategy.
pub struct ReferenceEmbedder {
    config: EmbedderConfig,
    calls: AtomicU64,
}

impl ReferenceEmbedder {
    pub fn new(config: EmbedderConfig) -> Self {
        Self {
            config,
            calls: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }
}

impl Embedder for ReferenceEmbedder {
    fn name(&self) -> &'static str {
        "reference"
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_tokens(&self, tokens: &TokenSeq) -> Result<Embedding> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(embed_reference(tokens, &self.config))
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}
