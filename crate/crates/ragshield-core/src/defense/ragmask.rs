//! Mask-and-rescore sanitizer.
//!
//! Retrieve the top `ceil(alpha * p)` candidates, split each into `m`-token
//! segments, and test every segment independently against the original
//! document: delete the segment, re-embed, and compare the similarity shift
//! against `delta`. A segment whose removal costs less than `delta`
//! similarity is benign and kept (`v' + delta > v`); a segment whose removal
//! recovers at least `delta` was inflating the score and is discarded.
//! Sanitized documents are re-embedded, re-ranked, and the top `p` returned.

use serde::{Deserialize, Serialize};

use super::{Defense, DefenseResult, RetrievalContext};
use crate::embed::{similarity, Embedder, Embedding, TokenSeq};
use crate::error::{Error, Result};
use crate::index::IndexMethod;

/// Sanitizer parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Mask length in tokens.
    pub m: usize,
    /// Similarity-shift threshold (in the embedder's similarity units; must
    /// be calibrated per embedder).
    pub delta: f32,
    /// Candidate pool multiplier, > 1.
    pub alpha: f64,
    /// Final result size.
    pub p: usize,
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::usage("mask length m must be >= 1"));
        }
        if !(self.alpha > 1.0) {
            return Err(Error::usage("alpha must be > 1"));
        }
        if self.p == 0 {
            return Err(Error::usage("p must be >= 1"));
        }
        if !self.delta.is_finite() {
            return Err(Error::usage("delta must be finite"));
        }
        Ok(())
    }

    /// Candidate pool size `ceil(alpha * p)`.
    pub fn pool_size(&self) -> usize {
        (self.alpha * self.p as f64).ceil() as usize
    }
}

/// A candidate document after segment decisions were applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizedDoc {
    pub doc_id: String,
    pub kept_segments: Vec<bool>,
    pub sanitized_tokens: TokenSeq,
    pub original_score: f32,
    pub sanitized_score: f32,
}

/// The audit record emitted per candidate in results files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocMaskDecision {
    pub doc_id: String,
    pub kept_segments: Vec<bool>,
    pub original_score: f32,
    pub sanitized_score: f32,
}

impl From<&SanitizedDoc> for DocMaskDecision {
    fn from(s: &SanitizedDoc) -> Self {
        DocMaskDecision {
            doc_id: s.doc_id.clone(),
            kept_segments: s.kept_segments.clone(),
            original_score: s.original_score,
            sanitized_score: s.sanitized_score,
        }
    }
}

/// Contiguous `ceil(len/m)` segments of length `m`, the final one shorter.
pub fn segment(tokens: &TokenSeq, m: usize) -> Result<Vec<TokenSeq>> {
    if m == 0 {
        return Err(Error::usage("mask length m must be >= 1"));
    }
    Ok(tokens
        .tokens
        .chunks(m)
        .map(|chunk| TokenSeq::new(chunk.to_vec(), tokens.source_id.clone()))
        .collect())
}

/// Sanitizes one document: computes the document's own similarity to the
/// query, then applies the per-segment shift test. Costs `ceil(len/m) + 2`
/// embedder calls; use [`sanitize_with_score`] when the original score is
/// already known from the index.
pub fn sanitize(
    doc: &TokenSeq,
    query_emb: &Embedding,
    config: &MaskConfig,
    embedder: &dyn Embedder,
) -> Result<SanitizedDoc> {
    if doc.is_empty() {
        return Err(Error::usage("sanitize requires a nonempty document"));
    }
    let original = embedder.embed_tokens(doc)?;
    let v = similarity(&original, query_emb)?;
    sanitize_with_score(doc, v, query_emb, config, embedder)
}

/// Segment-shift sanitization with the original score supplied by the
/// caller. Exactly `ceil(len/m)` embedder calls for the masked variants plus
/// one for the sanitized re-embedding.
///
/// Each segment is judged independently against the original document, so
/// decisions are order-free and parallelizable.
pub fn sanitize_with_score(
    doc: &TokenSeq,
    original_score: f32,
    query_emb: &Embedding,
    config: &MaskConfig,
    embedder: &dyn Embedder,
) -> Result<SanitizedDoc> {
    config.validate()?;
    let segments = segment(doc, config.m)?;
    let mut kept_segments = Vec::with_capacity(segments.len());
    for i in 0..segments.len() {
        // Delete segment i from the original document, re-embed, compare.
        let mut remaining: Vec<String> = Vec::with_capacity(doc.len());
        for (j, seg) in segments.iter().enumerate() {
            if j != i {
                remaining.extend(seg.tokens.iter().cloned());
            }
        }
        let masked = TokenSeq::new(remaining, doc.source_id.clone());
        let masked_emb = embedder.embed_tokens(&masked)?;
        let shifted = similarity(&masked_emb, query_emb)?;
        // Keep iff removal costs less than delta similarity (strict).
        kept_segments.push(shifted + config.delta > original_score);
    }

    let mut sanitized_tokens: Vec<String> = Vec::with_capacity(doc.len());
    for (seg, &keep) in segments.iter().zip(&kept_segments) {
        if keep {
            sanitized_tokens.extend(seg.tokens.iter().cloned());
        }
    }
    let sanitized_tokens = TokenSeq::new(sanitized_tokens, doc.source_id.clone());
    let sanitized_emb = embedder.embed_tokens(&sanitized_tokens)?;
    let sanitized_score = similarity(&sanitized_emb, query_emb)?;

    Ok(SanitizedDoc {
        doc_id: doc.source_id.clone(),
        kept_segments,
        sanitized_tokens,
        original_score,
        sanitized_score,
    })
}

/// The mask-and-rescore defense over a full-document index.
pub struct RagmaskDefense {
    pub config: MaskConfig,
}

impl Defense for RagmaskDefense {
    fn name(&self) -> &'static str {
        "ragmask"
    }

    fn required_method(&self) -> IndexMethod {
        IndexMethod::Full
    }

    fn retrieve(&self, query: &Embedding, ctx: &RetrievalContext) -> Result<DefenseResult> {
        let header = ctx.index.header();
        if header.method != IndexMethod::Full {
            return Err(Error::usage(format!(
                "ragmask needs a full-document index, got {}",
                header.method.as_str()
            )));
        }
        let pool = if ctx.index.is_empty() {
            crate::index::RankedList { entries: vec![] }
        } else {
            ctx.index.top_p(0, query, self.config.pool_size())?
        };

        let mut sanitized: Vec<SanitizedDoc> = Vec::with_capacity(pool.len());
        for (doc_id, score) in &pool.entries {
            let tokens = ctx.docs.doc_tokens(doc_id).ok_or_else(|| {
                Error::usage(format!("document {doc_id} not found in the corpus"))
            })?;
            if tokens.is_empty() {
                // Nothing to mask; an empty document sanitizes to itself.
                sanitized.push(SanitizedDoc {
                    doc_id: doc_id.clone(),
                    kept_segments: vec![],
                    sanitized_tokens: TokenSeq::new(vec![], doc_id.clone()),
                    original_score: *score,
                    sanitized_score: 0.0,
                });
                continue;
            }
            sanitized.push(sanitize_with_score(
                &tokens,
                *score,
                query,
                &self.config,
                ctx.embedder,
            )?);
        }

        // Re-rank by sanitized score, ties by ascending doc id.
        let mut order: Vec<usize> = (0..sanitized.len()).collect();
        order.sort_by(|&a, &b| {
            sanitized[b]
                .sanitized_score
                .total_cmp(&sanitized[a].sanitized_score)
                .then(sanitized[a].doc_id.cmp(&sanitized[b].doc_id))
        });

        let top: Vec<&SanitizedDoc> = order
            .iter()
            .take(self.config.p)
            .map(|&i| &sanitized[i])
            .collect();
        Ok(DefenseResult {
            final_docs: top.iter().map(|s| s.doc_id.clone()).collect(),
            final_scores: top.iter().map(|s| s.sanitized_score).collect(),
            per_combo_lists: vec![pool],
            vote_counts: Default::default(),
            used_fallback: false,
            mask_decisions: sanitized.iter().map(DocMaskDecision::from).collect(),
        })
    }
}
