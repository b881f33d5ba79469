//! Per-combination retrieval plus the combo-index defenses.
//!
//! `ComboDefense` queries each of the `C(N,k)` combination databases for its
//! own top-p list and hands the lists to the configured aggregator. The same
//! execution covers the partition defense (pooled mixes) and the naive
//! baseline (concatenate-then-embed mixes); only the required index method
//! differs. `NoDefense` is plain undefended top-p over the full-document
//! index.

use super::aggregate::{build_aggregator, AggregationConfig, Aggregator};
use super::{Defense, DefenseResult, RetrievalContext};
use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::index::{IndexMethod, RankedList, VectorIndex};

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// One top-p list per combination database, in combo-id order. An empty
/// index still yields `C(N,k)` (empty) lists.
pub fn retrieve_per_combination(
    index: &VectorIndex,
    query: &Embedding,
    p: usize,
) -> Result<Vec<RankedList>> {
    let header = index.header();
    let combos = match header.method {
        IndexMethod::Full => 1,
        IndexMethod::Ragpart | IndexMethod::Naive => {
            binomial(u64::from(header.n), u64::from(header.k))
        }
    };
    let mut lists = Vec::with_capacity(combos as usize);
    for combo_id in 0..combos as u32 {
        if index.is_empty() {
            lists.push(RankedList { entries: vec![] });
        } else {
            lists.push(index.top_p(combo_id, query, p)?);
        }
    }
    Ok(lists)
}

/// Undefended top-p retrieval over the full-document index.
pub struct NoDefense {
    pub p: usize,
}

impl Defense for NoDefense {
    fn name(&self) -> &'static str {
        "none"
    }

    fn required_method(&self) -> IndexMethod {
        IndexMethod::Full
    }

    fn retrieve(&self, query: &Embedding, ctx: &RetrievalContext) -> Result<DefenseResult> {
        let list = if ctx.index.is_empty() {
            RankedList { entries: vec![] }
        } else {
            ctx.index.top_p(0, query, self.p)?
        };
        Ok(DefenseResult {
            final_docs: list.doc_ids().map(str::to_string).collect(),
            final_scores: list.entries.iter().map(|(_, s)| *s).collect(),
            per_combo_lists: vec![list],
            vote_counts: Default::default(),
            used_fallback: false,
            mask_decisions: Vec::new(),
        })
    }
}

/// Partition defense / naive combination baseline: retrieve per combination,
/// aggregate. Which of the two runs is decided by the index method built for
/// it.
pub struct ComboDefense {
    method: IndexMethod,
    n: usize,
    k: usize,
    aggregation: AggregationConfig,
    aggregator: Box<dyn Aggregator>,
}

impl ComboDefense {
    pub fn new(
        method: IndexMethod,
        n: usize,
        k: usize,
        aggregation: AggregationConfig,
    ) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::usage(format!(
                "combination size k={k} must satisfy 1 <= k <= N={n}"
            )));
        }
        if !matches!(method, IndexMethod::Ragpart | IndexMethod::Naive) {
            return Err(Error::usage("combo defense requires a ragpart or naive index"));
        }
        let aggregator = build_aggregator(&aggregation)?;
        Ok(Self {
            method,
            n,
            k,
            aggregation,
            aggregator,
        })
    }
}

impl Defense for ComboDefense {
    fn name(&self) -> &'static str {
        match self.method {
            IndexMethod::Ragpart => "ragpart",
            _ => "naive_combo",
        }
    }

    fn required_method(&self) -> IndexMethod {
        self.method
    }

    fn retrieve(&self, query: &Embedding, ctx: &RetrievalContext) -> Result<DefenseResult> {
        let header = ctx.index.header();
        if header.method != self.method {
            return Err(Error::usage(format!(
                "defense {} needs a {} index, got {}",
                self.name(),
                self.method.as_str(),
                header.method.as_str()
            )));
        }
        if header.n as usize != self.n || header.k as usize != self.k {
            return Err(Error::usage(format!(
                "index was built with N={}, k={}, defense configured with N={}, k={}",
                header.n, header.k, self.n, self.k
            )));
        }
        let lists = retrieve_per_combination(ctx.index, query, self.aggregation.p)?;
        Ok(self.aggregator.aggregate(lists))
    }
}
