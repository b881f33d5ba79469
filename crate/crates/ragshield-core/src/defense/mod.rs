//! Defended retrieval strategies and their registry.
//!
//! Four interchangeable strategies implement [`Defense`]:
//!
//! | name          | pipeline                                              |
//! |---------------|-------------------------------------------------------|
//! | `none`        | plain top-p over full-document embeddings             |
//! | `ragpart`     | per-combination retrieval over pooled fragment mixes, aggregated |
//! | `naive_combo` | same, over concatenate-then-embed mixes               |
//! | `ragmask`     | candidate pool, segment masking, sanitize and re-rank |
//!
//! Build one by spec with [`build_defense`].

pub mod aggregate;
pub mod ragmask;
pub mod ragpart;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embed::{Embedder, Embedding, TokenSeq};
use crate::error::{Error, Result};
use crate::index::{IndexMethod, RankedList, VectorIndex};

pub use aggregate::{
    aggregate_intersection, aggregate_majority, build_aggregator, AggregationConfig,
    AggregationStrategy, Aggregator,
};
pub use ragmask::{sanitize, segment, DocMaskDecision, MaskConfig, SanitizedDoc};
pub use ragpart::retrieve_per_combination;

/// Token access for defenses that need raw document text (ragmask).
pub trait DocStore: Sync {
    fn doc_tokens(&self, doc_id: &str) -> Option<TokenSeq>;
}

/// A store with no documents; sufficient for defenses that work purely on
/// index vectors.
pub struct EmptyDocStore;

impl DocStore for EmptyDocStore {
    fn doc_tokens(&self, _doc_id: &str) -> Option<TokenSeq> {
        None
    }
}

/// Everything a defense may need at query time.
pub struct RetrievalContext<'a> {
    pub index: &'a VectorIndex,
    pub docs: &'a dyn DocStore,
    pub embedder: &'a dyn Embedder,
}

/// Outcome of one defended retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseResult {
    /// Final documents, at most `p`, in the defense's trust order.
    pub final_docs: Vec<String>,
    /// Score aligned with `final_docs`: vote count, mean score, similarity
    /// or sanitized similarity depending on the strategy.
    pub final_scores: Vec<f32>,
    /// The per-combination ranked lists that fed aggregation (a single list
    /// for `none` and for the ragmask candidate pool).
    pub per_combo_lists: Vec<RankedList>,
    /// Occurrence count per document across the per-combination lists
    /// (majority vote and intersection only).
    pub vote_counts: BTreeMap<String, u32>,
    /// True when the intersection fallback drew random documents.
    pub used_fallback: bool,
    /// Per-candidate mask decisions (ragmask only).
    pub mask_decisions: Vec<DocMaskDecision>,
}

/// A defended retrieval strategy.
pub trait Defense: Send + Sync {
    /// Registry name of the strategy.
    fn name(&self) -> &'static str;

    /// Index method this defense expects to query.
    fn required_method(&self) -> IndexMethod;

    /// Final top-p retrieval for one embedded query.
    fn retrieve(&self, query: &Embedding, ctx: &RetrievalContext) -> Result<DefenseResult>;
}

/// Declarative defense selection, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseSpec {
    None,
    Ragpart {
        n: usize,
        k: usize,
        #[serde(default)]
        aggregation: AggregationStrategy,
    },
    NaiveCombo {
        n: usize,
        k: usize,
        #[serde(default)]
        aggregation: AggregationStrategy,
    },
    Ragmask {
        m: usize,
        delta: f32,
        alpha: f64,
    },
}

impl DefenseSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseSpec::None => "none",
            DefenseSpec::Ragpart { .. } => "ragpart",
            DefenseSpec::NaiveCombo { .. } => "naive_combo",
            DefenseSpec::Ragmask { .. } => "ragmask",
        }
    }
}

/// Registry constructor: builds the defense named by `spec`. `p` is the
/// final result size; `rng_seed` drives the intersection fallback.
pub fn build_defense(spec: &DefenseSpec, p: usize, rng_seed: u64) -> Result<Box<dyn Defense>> {
    if p == 0 {
        return Err(Error::usage("p must be >= 1"));
    }
    match spec {
        DefenseSpec::None => Ok(Box::new(ragpart::NoDefense { p })),
        DefenseSpec::Ragpart { n, k, aggregation } => Ok(Box::new(ragpart::ComboDefense::new(
            IndexMethod::Ragpart,
            *n,
            *k,
            AggregationConfig {
                strategy: *aggregation,
                p,
                rng_seed,
            },
        )?)),
        DefenseSpec::NaiveCombo { n, k, aggregation } => Ok(Box::new(ragpart::ComboDefense::new(
            IndexMethod::Naive,
            *n,
            *k,
            AggregationConfig {
                strategy: *aggregation,
                p,
                rng_seed,
            },
        )?)),
        DefenseSpec::Ragmask { m, delta, alpha } => {
            let config = MaskConfig {
                m: *m,
                delta: *delta,
                alpha: *alpha,
                p,
            };
            config.validate()?;
            Ok(Box::new(ragmask::RagmaskDefense { config }))
        }
    }
}

/// Names accepted by [`build_defense`].
pub fn defense_names() -> &'static [&'static str] {
    &["none", "ragpart", "naive_combo", "ragmask"]
}
