//! Attack success rate and (benign) success rate.
//!
//! ASR: fraction of attacked queries whose final top-p contains at least one
//! poison targeting that query. SR: fraction of queries with judgments whose
//! final top-p contains at least one golden document. Undefined denominators
//! yield `None`, reported as JSON null rather than 0.

use std::collections::{BTreeMap, BTreeSet};

use super::data::Qrels;

/// Map from query id to the final retrieved doc ids, in rank order.
pub type RetrievedSets = BTreeMap<String, Vec<String>>;

/// Map from query id to the poison ids targeting it.
pub type PoisonTargets = BTreeMap<String, BTreeSet<String>>;

/// Attack success rate over the attacked queries present in `results`.
pub fn asr(results: &RetrievedSets, targets: &PoisonTargets) -> Option<f64> {
    let mut attacked = 0usize;
    let mut hits = 0usize;
    for (query_id, retrieved) in results {
        let Some(poisons) = targets.get(query_id) else {
            continue; // not attacked: skipped
        };
        if poisons.is_empty() {
            continue;
        }
        attacked += 1;
        if retrieved.iter().any(|d| poisons.contains(d)) {
            hits += 1;
        }
    }
    (attacked > 0).then(|| hits as f64 / attacked as f64)
}

/// Success rate over the queries with nonempty judgments.
pub fn sr(results: &RetrievedSets, qrels: &Qrels) -> Option<f64> {
    let mut judged = 0usize;
    let mut hits = 0usize;
    for (query_id, retrieved) in results {
        let Some(golden) = qrels.golden_for(query_id) else {
            continue; // no judgments: excluded from the denominator
        };
        if golden.is_empty() {
            continue;
        }
        judged += 1;
        if retrieved.iter().any(|d| golden.contains(d)) {
            hits += 1;
        }
    }
    (judged > 0).then(|| hits as f64 / judged as f64)
}
