//! Index construction from a corpus: full-document, pooled-combination and
//! naive-combination embedding databases.

use rayon::prelude::*;

use super::data::Corpus;
use crate::embed::{Embedder, EmbedderConfig};
use crate::error::Result;
use crate::fragment::{enumerate_combinations, naive_embedding, partition, ragpart_embedding};
use crate::index::{IndexEntry, IndexMethod, VectorIndex};

/// One raw full-document embedding per document, `combo_id = 0`.
pub fn build_full_index(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    config: &EmbedderConfig,
) -> Result<VectorIndex> {
    let ids: Vec<&String> = corpus.docs.keys().collect();
    let entries: Result<Vec<IndexEntry>> = ids
        .par_iter()
        .map(|id| {
            let tokens = corpus.tokens(id).expect("listed doc exists");
            Ok(IndexEntry {
                doc_id: (*id).clone(),
                combo_id: 0,
                vector: embedder.embed_tokens(&tokens)?,
            })
        })
        .collect();
    VectorIndex::build(entries?, 1, 1, IndexMethod::Full, config.fingerprint())
}

/// `C(N,k)` combination embeddings per document. `Ragpart` pools the
/// per-fragment embeddings (normalized per the config); `Naive` embeds the
/// concatenated fragment text. Exactly `D * N` embedder calls for ragpart
/// and `D * C(N,k)` for naive.
pub fn build_combo_index(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    config: &EmbedderConfig,
    n: usize,
    k: usize,
    method: IndexMethod,
) -> Result<VectorIndex> {
    let combos = enumerate_combinations(n, k)?;
    let ids: Vec<&String> = corpus.docs.keys().collect();
    let per_doc: Result<Vec<Vec<IndexEntry>>> = ids
        .par_iter()
        .map(|id| {
            let tokens = corpus.tokens(id).expect("listed doc exists");
            let fragments = partition(&tokens, n)?;
            let mut entries = Vec::with_capacity(combos.len());
            match method {
                IndexMethod::Ragpart => {
                    let frag_embeddings = fragments
                        .fragments
                        .iter()
                        .map(|f| embedder.embed_tokens(f))
                        .collect::<Result<Vec<_>>>()?;
                    for (combo_id, combo) in combos.iter().enumerate() {
                        let vector = ragpart_embedding(
                            &frag_embeddings,
                            combo,
                            config.normalize_fragments,
                        )?;
                        entries.push(IndexEntry {
                            doc_id: (*id).clone(),
                            combo_id: combo_id as u32,
                            vector,
                        });
                    }
                }
                IndexMethod::Naive => {
                    for (combo_id, combo) in combos.iter().enumerate() {
                        let vector = naive_embedding(&fragments, combo, embedder)?;
                        entries.push(IndexEntry {
                            doc_id: (*id).clone(),
                            combo_id: combo_id as u32,
                            vector,
                        });
                    }
                }
                IndexMethod::Full => {
                    return Err(crate::error::Error::usage(
                        "use build_full_index for full-document indexes",
                    ))
                }
            }
            Ok(entries)
        })
        .collect();
    let entries: Vec<IndexEntry> = per_doc?.into_iter().flatten().collect();
    VectorIndex::build(
        entries,
        n as u32,
        k as u32,
        method,
        config.fingerprint(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::reference::ReferenceEmbedder;
    use crate::harness::data::CorpusDoc;

    fn corpus(n_docs: usize) -> Corpus {
        let mut c = Corpus::default();
        for i in 0..n_docs {
            c.docs.insert(
                format!("d{i}"),
                CorpusDoc {
                    title: String::new(),
                    text: (0..12).map(|j| format!("w{i}x{j}")).collect::<Vec<_>>().join(" "),
                },
            );
        }
        c
    }

    #[test]
    fn full_index_embeds_each_doc_once() {
        let cfg = EmbedderConfig::reference(64);
        let e = ReferenceEmbedder::new(cfg.clone());
        let c = corpus(7);
        let idx = build_full_index(&c, &e, &cfg).unwrap();
        assert_eq!(idx.len(), 7);
        assert_eq!(e.calls(), 7);
        assert_eq!(idx.header().method, IndexMethod::Full);
    }

    #[test]
    fn ragpart_index_call_count_is_docs_times_fragments() {
        let cfg = EmbedderConfig::reference(64);
        let e = ReferenceEmbedder::new(cfg.clone());
        let c = corpus(6);
        let idx = build_combo_index(&c, &e, &cfg, 5, 3, IndexMethod::Ragpart).unwrap();
        assert_eq!(idx.len(), 6 * 10);
        assert_eq!(e.calls(), 6 * 5);
    }

    #[test]
    fn naive_index_call_count_is_docs_times_combos() {
        let cfg = EmbedderConfig::reference(64);
        let e = ReferenceEmbedder::new(cfg.clone());
        let c = corpus(4);
        let idx = build_combo_index(&c, &e, &cfg, 4, 2, IndexMethod::Naive).unwrap();
        assert_eq!(idx.len(), 4 * 6);
        assert_eq!(e.calls(), 4 * 6);
    }
}
