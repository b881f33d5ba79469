//! Gradient-free greedy token-substitution attack.
//!
//! The gradient-guided token search of white-box attacks is replaced by
//! black-box greedy candidate scoring against the pluggable embedder: the
//! search structure (iterations x candidates, argmax per slot) is the same,
//! but fitness is the full-document similarity to the target query, so it
//! works for any embedder, remote ones included.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttackBudget, AttackKind, PoisonRecord};
use crate::embed::{similarity, Embedder, Embedding, TokenSeq};
use crate::error::{Error, Result};

/// Slot layout for the adversarial tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreedyMode {
    /// One contiguous block at a seeded-random position.
    #[default]
    Concentrated,
    /// Slots spread across the document, one per chunk of an
    /// `n_tokens`-way partition. Because chunk sizing matches the
    /// fragmenter's rule, no two slots share a fragment whenever
    /// `n_tokens <= N`.
    Spread,
}

/// Slot positions in poisoned-document coordinates, plus the base-token
/// layout around them.
fn slot_positions(base_len: usize, n: usize, mode: GreedyMode, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match mode {
        GreedyMode::Concentrated => {
            let start = rng.gen_range(0..=base_len);
            (start..start + n).collect()
        }
        GreedyMode::Spread => {
            // Chunk starts of an n-way partition of the poisoned length,
            // front-loaded remainder first — the same rule partition() uses.
            let total = base_len + n;
            let base = total / n;
            let rem = total % n;
            let mut out = Vec::with_capacity(n);
            let mut pos = 0;
            for i in 0..n {
                out.push(pos);
                pos += if i < rem { base + 1 } else { base };
            }
            out
        }
    }
}

/// Greedy token search: fill `budget.n_tokens` slots with vocabulary tokens
/// maximizing full-document similarity to the query.
///
/// Each round visits one slot (round-robin) and scores `budget.candidates`
/// seeded-random vocabulary tokens plus the current token; the current token
/// wins ties, so accepted flips strictly improve similarity. The search
/// stops early once a full pass over all slots yields no improvement.
/// Deterministic given `budget.rng_seed`.
pub fn greedy_flip(
    query_emb: &Embedding,
    base_doc: &TokenSeq,
    vocab: &[String],
    budget: &AttackBudget,
    mode: GreedyMode,
    embedder: &dyn Embedder,
) -> Result<PoisonRecord> {
    if vocab.is_empty() {
        return Err(Error::usage("greedy_flip requires a nonempty vocabulary"));
    }
    budget.validate()?;
    let n = budget.n_tokens;
    let mut rng = ChaCha8Rng::seed_from_u64(budget.rng_seed);
    let slots = slot_positions(base_doc.len(), n, mode, &mut rng);

    // Assemble the poisoned document with every slot holding the
    // placeholder vocab[0].
    let mut tokens: Vec<String> = Vec::with_capacity(base_doc.len() + n);
    {
        let mut base_iter = base_doc.tokens.iter();
        let mut slot_iter = slots.iter().peekable();
        for pos in 0..base_doc.len() + n {
            if slot_iter.peek() == Some(&&pos) {
                slot_iter.next();
                tokens.push(vocab[0].clone());
            } else {
                tokens.push(base_iter.next().expect("base token").clone());
            }
        }
    }

    let score = |tokens: &Vec<String>| -> Result<f32> {
        let emb = embedder.embed_tokens(&TokenSeq::new(tokens.clone(), String::new()))?;
        similarity(&emb, query_emb)
    };

    let mut best = score(&tokens)?;
    let mut stale_rounds = 0;
    for round in 0..budget.iterations {
        let slot = slots[round % n];
        let mut improved = false;
        for _ in 0..budget.candidates {
            let candidate = &vocab[rng.gen_range(0..vocab.len())];
            if candidate == &tokens[slot] {
                continue;
            }
            let previous = std::mem::replace(&mut tokens[slot], candidate.clone());
            let trial = score(&tokens)?;
            if trial > best {
                best = trial;
                improved = true;
            } else {
                tokens[slot] = previous;
            }
        }
        if improved {
            stale_rounds = 0;
        } else {
            stale_rounds += 1;
            if stale_rounds >= n {
                break;
            }
        }
    }

    Ok(PoisonRecord {
        poison_id: String::new(),
        base_doc_id: base_doc.source_id.clone(),
        target_query_id: String::new(),
        attack: match mode {
            GreedyMode::Concentrated => AttackKind::Greedy,
            GreedyMode::Spread => AttackKind::GreedySpread,
        },
        injected_spans: match mode {
            GreedyMode::Concentrated => vec![(slots[0], n)],
            GreedyMode::Spread => slots.iter().map(|&p| (p, 1)).collect(),
        },
        poisoned_tokens: TokenSeq::new(tokens, base_doc.source_id.clone()),
        achieved_similarity: best,
    })
}
