//! Aggregation strategies for the per-combination ranked lists.
//!
//! Majority vote keeps the `p` documents that appear most frequently across
//! the `C(N,k)` lists; intersection keeps documents present in every list,
//! falling back to a seeded random draw from the union when the intersection
//! is empty.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DefenseResult;
use crate::error::{Error, Result};
use crate::index::RankedList;

/// Which aggregation strategy to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    #[default]
    MajorityVote,
    Intersection,
}

impl AggregationStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationStrategy::MajorityVote => "majority_vote",
            AggregationStrategy::Intersection => "intersection",
        }
    }
}

/// Aggregation parameters; `rng_seed` drives the intersection fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub strategy: AggregationStrategy,
    pub p: usize,
    pub rng_seed: u64,
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::usage("aggregation p must be >= 1"));
        }
        Ok(())
    }
}

/// An aggregation strategy behind a uniform interface.
pub trait Aggregator: Send + Sync {
    fn name(&self) -> &'static str;
    fn aggregate(&self, lists: Vec<RankedList>) -> DefenseResult;
}

struct MajorityVote {
    p: usize,
}

struct Intersection {
    config: AggregationConfig,
}

/// Registry constructor for aggregation strategies.
pub fn build_aggregator(config: &AggregationConfig) -> Result<Box<dyn Aggregator>> {
    config.validate()?;
    match config.strategy {
        AggregationStrategy::MajorityVote => Ok(Box::new(MajorityVote { p: config.p })),
        AggregationStrategy::Intersection => Ok(Box::new(Intersection {
            config: config.clone(),
        })),
    }
}

/// Names accepted for aggregation strategies.
pub fn aggregator_names() -> &'static [&'static str] {
    &["majority_vote", "intersection"]
}

impl Aggregator for MajorityVote {
    fn name(&self) -> &'static str {
        "majority_vote"
    }

    fn aggregate(&self, lists: Vec<RankedList>) -> DefenseResult {
        aggregate_majority(lists, self.p)
    }
}

impl Aggregator for Intersection {
    fn name(&self) -> &'static str {
        "intersection"
    }

    fn aggregate(&self, lists: Vec<RankedList>) -> DefenseResult {
        aggregate_intersection(lists, &self.config)
    }
}

/// Majority-vote aggregation: the `p` documents appearing most frequently
/// across the lists, ties broken first by the best (lowest) rank the
/// document achieved in any list, then by ascending doc id. Output is
/// ordered by descending count.
pub fn aggregate_majority(lists: Vec<RankedList>, p: usize) -> DefenseResult {
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    let mut best_rank: BTreeMap<&str, usize> = BTreeMap::new();
    for list in &lists {
        for (rank, (doc_id, _)) in list.entries.iter().enumerate() {
            *counts.entry(doc_id.clone()).or_insert(0) += 1;
            best_rank
                .entry(doc_id.as_str())
                .and_modify(|r| *r = (*r).min(rank))
                .or_insert(rank);
        }
    }
    let mut ranked: Vec<(&String, u32, usize)> = counts
        .iter()
        .map(|(id, &count)| (id, count, best_rank[id.as_str()]))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(b.0)));
    ranked.truncate(p);

    DefenseResult {
        final_docs: ranked.iter().map(|(id, _, _)| (*id).clone()).collect(),
        final_scores: ranked.iter().map(|(_, count, _)| *count as f32).collect(),
        per_combo_lists: lists,
        vote_counts: counts,
        used_fallback: false,
        mask_decisions: Vec::new(),
    }
}

/// Intersection aggregation: documents present in every list, ordered by
/// mean score (ties by ascending doc id), truncated to `p`. When the
/// intersection is empty the fallback draws `p` documents from the union
/// with an RNG seeded by `config.rng_seed`; the result records that the
/// fallback fired.
pub fn aggregate_intersection(lists: Vec<RankedList>, config: &AggregationConfig) -> DefenseResult {
    let p = config.p;
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    let mut score_sum: BTreeMap<&str, f32> = BTreeMap::new();
    for list in &lists {
        for (doc_id, score) in &list.entries {
            *counts.entry(doc_id.clone()).or_insert(0) += 1;
            *score_sum.entry(doc_id.as_str()).or_insert(0.0) += score;
        }
    }
    let total = lists.len() as u32;
    let mut in_all: Vec<(&String, f32)> = counts
        .iter()
        .filter(|(_, &c)| total > 0 && c == total)
        .map(|(id, _)| (id, score_sum[id.as_str()] / total as f32))
        .collect();

    if !in_all.is_empty() || counts.is_empty() {
        in_all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        in_all.truncate(p);
        return DefenseResult {
            final_docs: in_all.iter().map(|(id, _)| (*id).clone()).collect(),
            final_scores: in_all.iter().map(|(_, s)| *s).collect(),
            per_combo_lists: lists,
            vote_counts: counts,
            used_fallback: false,
            mask_decisions: Vec::new(),
        };
    }

    // Empty intersection: seeded random draw of p docs from the union.
    // BTreeMap keys give a sorted union, so the draw depends only on the seed.
    let union: Vec<&String> = counts.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut picked: Vec<&String> = union
        .choose_multiple(&mut rng, p.min(union.len()))
        .copied()
        .collect();
    picked.sort();
    DefenseResult {
        final_docs: picked.iter().map(|id| (*id).clone()).collect(),
        final_scores: picked
            .iter()
            .map(|id| score_sum[id.as_str()] / counts[id.as_str()] as f32)
            .collect(),
        per_combo_lists: lists,
        vote_counts: counts,
        used_fallback: true,
        mask_decisions: Vec::new(),
    }
}
