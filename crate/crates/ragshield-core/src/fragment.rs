//! Document partitioning and fragment-combination embeddings.
//!
//! A document is split into `N` contiguous fragments; every size-`k` subset
//! of fragments ("mix") gets a combination embedding either by mean-pooling
//! the per-fragment embeddings (the partition defense) or by embedding the
//! concatenated raw text (the naive baseline). Combinations are enumerated
//! in colexicographic order so a combination's position — its `combo_id` —
//! is stable in persisted indexes.

use serde::{Deserialize, Serialize};

use crate::embed::{Embedder, Embedding, TokenSeq};
use crate::error::{Error, Result};

/// A document partitioned into `N` contiguous fragments.
///
/// Fragment lengths differ by at most one token (longer ones first); when
/// the document is shorter than `N`, trailing fragments are empty.
/// Concatenating the fragments in order reproduces the original tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentSet {
    pub doc_id: String,
    pub fragments: Vec<TokenSeq>,
    pub n: usize,
}

/// A size-`k` subset of fragment indices, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Combination {
    pub indices: Vec<usize>,
}

impl Combination {
    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

/// Splits `tokens` into `n` contiguous fragments: the first `len mod n`
/// fragments get `ceil(len/n)` tokens, the rest `floor(len/n)`.
pub fn partition(tokens: &TokenSeq, n: usize) -> Result<FragmentSet> {
    if n == 0 {
        return Err(Error::usage("fragment count N must be >= 1"));
    }
    let len = tokens.len();
    let base = len / n;
    let remainder = len % n;
    let mut fragments = Vec::with_capacity(n);
    let mut pos = 0;
    for i in 0..n {
        let size = if i < remainder { base + 1 } else { base };
        let slice = tokens.tokens[pos..pos + size].to_vec();
        fragments.push(TokenSeq::new(slice, tokens.source_id.clone()));
        pos += size;
    }
    debug_assert_eq!(pos, len);
    Ok(FragmentSet {
        doc_id: tokens.source_id.clone(),
        fragments,
        n,
    })
}

/// All `C(n,k)` size-`k` subsets of `{0..n}` in colexicographic order.
///
/// Colex order sorts subsets by their largest element, then the next
/// largest, and so on: for `n=4, k=2` the sequence is `{0,1}, {0,2}, {1,2},
/// {0,3}, {1,3}, {2,3}`. A combination's position in this list is its
/// `combo_id`.
pub fn enumerate_combinations(n: usize, k: usize) -> Result<Vec<Combination>> {
    if k == 0 || k > n {
        return Err(Error::usage(format!(
            "combination size k={k} must satisfy 1 <= k <= N={n}"
        )));
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(Combination {
            indices: current.clone(),
        });
        // Colex successor: bump the smallest index with free room above it,
        // reset everything below.
        let mut i = 0;
        loop {
            if i == k {
                return Ok(out);
            }
            let ceiling = if i + 1 < k { current[i + 1] } else { n };
            if current[i] + 1 < ceiling {
                current[i] += 1;
                for (j, slot) in current.iter_mut().enumerate().take(i) {
                    *slot = j;
                }
                break;
            }
            i += 1;
        }
    }
}

/// Colex rank of a sorted index set; inverse of position in
/// [`enumerate_combinations`].
pub fn colex_rank(indices: &[usize]) -> u64 {
    indices
        .iter()
        .enumerate()
        .map(|(i, &v)| binomial_u64(v as u64, i as u64 + 1))
        .sum()
}

fn binomial_u64(n: u64, k: u64) -> u64 {
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

/// Mean-pools the selected fragment embeddings into one combination
/// embedding. With `normalize_fragments` each selected embedding is
/// L2-normalized first (zero vectors pass through). The mean is accumulated
/// in fragment-index order; the result is not flagged normalized.
pub fn ragpart_embedding(
    frag_embeddings: &[Embedding],
    combo: &Combination,
    normalize_fragments: bool,
) -> Result<Embedding> {
    let k = combo.k();
    if k == 0 {
        return Err(Error::usage("combination must select at least one fragment"));
    }
    let Some(&first) = combo.indices.first() else {
        return Err(Error::usage("empty combination"));
    };
    let dim = frag_embeddings
        .get(first)
        .ok_or_else(|| Error::usage("combination index out of range"))?
        .dim();
    let mut values = vec![0.0f32; dim];
    for &idx in &combo.indices {
        let frag = frag_embeddings
            .get(idx)
            .ok_or_else(|| Error::usage(format!("combination index {idx} out of range")))?;
        if frag.dim() != dim {
            return Err(Error::usage(format!(
                "fragment embedding dimension mismatch: {} vs {}",
                frag.dim(),
                dim
            )));
        }
        let selected = if normalize_fragments {
            frag.normalized()
        } else {
            frag.clone()
        };
        for (acc, v) in values.iter_mut().zip(&selected.values) {
            *acc += v;
        }
    }
    let scale = 1.0 / k as f32;
    for v in &mut values {
        *v *= scale;
    }
    Ok(Embedding::new(values))
}

/// Naive combination baseline: concatenate the selected fragments' raw text
/// in ascending index order, then embed once.
pub fn naive_embedding(
    fragments: &FragmentSet,
    combo: &Combination,
    embedder: &dyn Embedder,
) -> Result<Embedding> {
    let mut parts = Vec::with_capacity(combo.k());
    for &idx in &combo.indices {
        let frag = fragments
            .fragments
            .get(idx)
            .ok_or_else(|| Error::usage(format!("combination index {idx} out of range")))?;
        parts.push(frag);
    }
    let joined = TokenSeq::concat(&parts);
    embedder.embed_tokens(&joined)
}
