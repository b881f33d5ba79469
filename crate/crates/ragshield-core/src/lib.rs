//! Retrieval-stage defenses against corpus poisoning of dense retrievers.
//!
//! The crate implements two complementary defenses plus everything needed to
//! evaluate them end to end:
//!
//! - **Partition defense** ([`defense::ragpart`]): split each document into
//!   `N` fragments, embed fragments individually, mean-pool every size-`k`
//!   fragment combination, retrieve per combination and aggregate the
//!   `C(N,k)` ranked lists by majority vote or intersection.
//! - **Mask defense** ([`defense::ragmask`]): retrieve an `alpha * p`
//!   candidate pool, occlude `m`-token segments, discard segments whose
//!   removal costs at least `delta` similarity, and re-rank the sanitized
//!   documents.
//! - **Attacks** ([`attack`]): query-as-poison injection and a gradient-free
//!   greedy token-substitution search (concentrated and spread-out), plus
//!   ingestion of externally generated poison files.
//! - **Theory** ([`theory`]): exact combinatorial robustness conditions,
//!   condition grids, FLOP cost models and a worst-case aggregation
//!   simulator.
//! - **Harness** ([`harness`]): corpus/query/qrels ingestion, ASR/SR
//!   metrics, parameter sweeps and deterministic JSON reports.
//!
//! Every algorithm family is exposed behind a trait with a by-name registry
//! (`embed::build_embedder`, `defense::build_defense`,
//! `defense::build_aggregator`, `attack::build_attack`) so variants are
//! selectable at runtime from config or CLI flags.
//!
//! All computation is deterministic: fixed hash functions, fixed summation
//! order, seeded RNGs, and tie-breaking by document id.

pub mod attack;
pub mod defense;
pub mod embed;
pub mod error;
pub mod fragment;
pub mod harness;
pub mod index;
pub mod theory;

pub use error::{Error, Result};
