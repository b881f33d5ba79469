//! Seeded synthetic corpus generation for desk-scale experiments.
//!
//! Layout: one topic per query. Each topic owns a disjoint vocabulary;
//! golden documents repeat the query's terms densely, related documents
//! carry a partial overlap (retrievable but weaker), and long background
//! documents share no topic vocabulary at all — the attack's "irrelevant"
//! base material. The separations are chosen so that, under the reference
//! embedder's inner product:
//!
//! - an injected verbatim query outscores the related tier at full-document
//!   scale (the undefended attack succeeds), yet
//! - the same injection lands in one fragment, where per-fragment
//!   normalization and mean pooling dilute it below the topical tier, and
//! - deleting the injected segment costs far more similarity than deleting
//!   any benign segment, giving the mask test a wide threshold window.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Corpus, CorpusDoc, Qrels, Query};
use crate::error::{Error, Result};

/// Shape of the generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub n_queries: usize,
    pub golden_per_query: usize,
    pub related_per_query: usize,
    /// Query length in tokens.
    pub query_len: usize,
    /// Golden/related document length in tokens.
    pub doc_len: usize,
    /// Short background document length in tokens. Short documents keep the
    /// corpus noise floor low at the full-document scale.
    pub background_len: usize,
    /// Length of the long background documents that serve as attack bases.
    /// Long bases are what fragment pooling dilutes.
    pub base_len: usize,
    /// Number of long background documents.
    pub n_bases: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_docs: 1000,
            n_queries: 64,
            golden_per_query: 3,
            related_per_query: 10,
            query_len: 8,
            doc_len: 30,
            background_len: 80,
            base_len: 280,
            n_bases: 16,
        }
    }
}

/// Generated dataset plus the id pools the attack protocol draws from.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    /// Ids of all background documents.
    pub background_ids: Vec<String>,
    /// Ids of the long background documents (candidate attack bases).
    pub base_ids: Vec<String>,
}

const SYLLABLES: &[&str] = &[
    "ba", "be", "bo", "da", "de", "du", "fa", "fi", "ga", "go", "ka", "ke", "ki", "ko", "la",
    "le", "li", "lo", "ma", "me", "mi", "mo", "na", "ne", "ni", "no", "pa", "pe", "po", "ra",
    "re", "ri", "ro", "sa", "se", "si", "so", "ta", "te", "ti", "to", "va", "ve", "vi", "za",
];

/// Deterministic pronounceable pseudo-word, unique within `used`.
fn fresh_word(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let syllables = 3 + (rng.gen_range(0..2usize));
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(SYLLABLES[rng.gen_range(0..SYLLABLES.len())]);
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// Spreads `content` tokens over a document of `len` tokens so that no two
/// content tokens are adjacent except the leading pair, and fills the rest
/// from `filler`. The leading pair lands at positions 0 and 1.
fn lay_out_doc(
    len: usize,
    content: &[String],
    adjacent_pair: bool,
    filler: &[String],
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    debug_assert!(content.len() * 2 <= len, "content too dense to spread");
    let mut doc: Vec<Option<String>> = vec![None; len];
    let mut positions = Vec::with_capacity(content.len());
    if adjacent_pair && content.len() >= 2 {
        positions.push(0);
        positions.push(1);
        let rest = content.len() - 2;
        for j in 0..rest {
            // Even stride over [4, len), keeping spread tokens non-adjacent.
            positions.push(4 + j * (len - 4) / rest.max(1));
        }
    } else {
        for (j, _) in content.iter().enumerate() {
            positions.push(j * len / content.len());
        }
    }
    for (token, pos) in content.iter().zip(&positions) {
        debug_assert!(doc[*pos].is_none());
        doc[*pos] = Some(token.clone());
    }
    for slot in doc.iter_mut() {
        if slot.is_none() {
            *slot = Some(filler[rng.gen_range(0..filler.len())].clone());
        }
    }
    doc.into_iter().map(Option::unwrap).collect()
}

/// Generates the corpus, queries and qrels.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    let topical = config.n_queries * (config.golden_per_query + config.related_per_query);
    if config.n_docs < topical + 3 {
        return Err(Error::usage(format!(
            "n_docs={} cannot hold {} topical docs plus attack bases",
            config.n_docs, topical
        )));
    }
    if config.query_len < 6 {
        return Err(Error::usage("query_len must be >= 6"));
    }
    // Densest layout is the golden tier: query_len + 5 content tokens, each
    // needing a non-adjacent slot.
    if config.doc_len < 2 * (config.query_len + 5) {
        return Err(Error::usage(
            "doc_len must be at least 2 * (query_len + 5)",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut used = BTreeSet::new();

    // Disjoint vocabularies: per-topic words and a shared background pool.
    let topic_vocab_size = config.query_len + 6;
    let topic_words: Vec<Vec<String>> = (0..config.n_queries)
        .map(|_| {
            (0..topic_vocab_size)
                .map(|_| fresh_word(&mut rng, &mut used))
                .collect()
        })
        .collect();
    let background_words: Vec<String> = (0..600).map(|_| fresh_word(&mut rng, &mut used)).collect();

    let mut corpus = Corpus::default();
    let mut queries = Vec::with_capacity(config.n_queries);
    let mut qrels = Qrels::default();

    for (t, words) in topic_words.iter().enumerate() {
        let query_id = format!("q{t:03}");
        let query_terms = &words[..config.query_len];
        queries.push(Query {
            id: query_id.clone(),
            text: query_terms.join(" "),
        });
        // Filler draws from the whole background pool: heavy repetition of a
        // single filler word would amplify its hash-collision contribution.
        let filler: Vec<String> = words[config.query_len..]
            .iter()
            .chain(background_words.iter())
            .cloned()
            .collect();

        // Golden tier: every query term once, the first five twice, plus
        // one adjacent query bigram. Inner product vs the query: ~14.
        for g in 0..config.golden_per_query {
            let mut content: Vec<String> = query_terms.to_vec();
            content.extend_from_slice(&query_terms[..5]);
            let tokens = lay_out_doc(config.doc_len, &content, true, &filler, &mut rng);
            let doc_id = format!("gold-{query_id}-{g}");
            corpus.docs.insert(
                doc_id.clone(),
                CorpusDoc {
                    title: String::new(),
                    text: tokens.join(" "),
                },
            );
            qrels
                .golden
                .entry(query_id.clone())
                .or_default()
                .insert(doc_id);
        }

        // Related tier: six of the query terms, twice each, never adjacent.
        // Inner product vs the query: ~12 — retrievable, below the poison.
        for r in 0..config.related_per_query {
            let mut content = Vec::with_capacity(12);
            for round in 0..2 {
                for j in 0..6 {
                    content.push(query_terms[(r + j + round) % config.query_len].clone());
                }
            }
            let tokens = lay_out_doc(config.doc_len, &content, false, &filler, &mut rng);
            corpus.docs.insert(
                format!("rel-{query_id}-{r}"),
                CorpusDoc {
                    title: String::new(),
                    text: tokens.join(" "),
                },
            );
        }
    }

    // Background tier: no topical vocabulary. Mostly short documents, plus
    // a small pool of long ones that the attack uses as bases.
    let n_background = config.n_docs - topical;
    let n_bases = config.n_bases.min(n_background);
    let mut background_ids = Vec::with_capacity(n_background);
    let mut base_ids = Vec::with_capacity(n_bases);
    for b in 0..n_background {
        let long = b < n_bases;
        let len = if long { config.base_len } else { config.background_len };
        let tokens: Vec<String> = (0..len)
            .map(|_| background_words[rng.gen_range(0..background_words.len())].clone())
            .collect();
        let doc_id = if long {
            format!("bgl-{b:04}")
        } else {
            format!("bg-{b:04}")
        };
        background_ids.push(doc_id.clone());
        if long {
            base_ids.push(doc_id.clone());
        }
        corpus.docs.insert(
            doc_id,
            CorpusDoc {
                title: String::new(),
                text: tokens.join(" "),
            },
        );
    }

    Ok(SynthData {
        corpus,
        queries,
        qrels,
        background_ids,
        base_ids,
    })
}

/// Seeded choice of `count` distinct attack bases per query, drawn from the
/// long background tier.
pub fn pick_attack_bases(
    data: &SynthData,
    count: usize,
    seed: u64,
) -> Vec<(String, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    data.queries
        .iter()
        .map(|q| {
            let bases: Vec<String> = data
                .base_ids
                .choose_multiple(&mut rng, count)
                .cloned()
                .collect();
            (q.id.clone(), bases)
        })
        .collect()
}
