//! Poison generation against a pluggable embedder, corpus injection, and
//! ingestion of externally generated poisons.
//!
//! Attack strategies behind the [`PoisonAttack`] trait:
//!
//! | name            | construction                                         |
//! |-----------------|------------------------------------------------------|
//! | `query_as_poison` | insert the query verbatim into the base document   |
//! | `greedy`        | black-box greedy token search, one contiguous block  |
//! | `greedy_spread` | same search with slots spread across the document    |
//!
//! Externally generated poisons (`attack = "external"`) are ingested from
//! manifest files rather than crafted here.

pub mod greedy;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{similarity, Embedder, TokenSeq};
use crate::error::{Error, Result};
use crate::harness::data::{Corpus, CorpusDoc};

pub use greedy::{greedy_flip, GreedyMode};

/// Attack taxonomy carried in poison provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    QueryAsPoison,
    Greedy,
    GreedySpread,
    External,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::QueryAsPoison => "query_as_poison",
            AttackKind::Greedy => "greedy",
            AttackKind::GreedySpread => "greedy_spread",
            AttackKind::External => "external",
        }
    }
}

/// Where `query_as_poison` inserts the query tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertPosition {
    #[default]
    Prepend,
    Append,
    Middle,
}

/// Search budget for the greedy attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackBudget {
    /// Number of adversarial token slots.
    pub n_tokens: usize,
    pub iterations: usize,
    pub candidates: usize,
    pub rng_seed: u64,
}

impl Default for AttackBudget {
    fn default() -> Self {
        Self {
            n_tokens: 20,
            iterations: 30,
            candidates: 30,
            rng_seed: 0,
        }
    }
}

impl AttackBudget {
    pub fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 {
            return Err(Error::usage("attack budget n_tokens must be >= 1"));
        }
        if self.candidates == 0 {
            return Err(Error::usage("attack budget candidates must be >= 1"));
        }
        Ok(())
    }
}

/// An adversarial document plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonRecord {
    pub poison_id: String,
    pub base_doc_id: String,
    pub target_query_id: String,
    pub attack: AttackKind,
    /// `(position, token count)` spans in `poisoned_tokens` coordinates;
    /// removing them recovers the base document.
    pub injected_spans: Vec<(usize, usize)>,
    pub poisoned_tokens: TokenSeq,
    pub achieved_similarity: f32,
}

impl PoisonRecord {
    /// Removes the injected spans, recovering the base document's tokens.
    pub fn strip_injected(&self) -> Vec<String> {
        let mut injected = vec![false; self.poisoned_tokens.len()];
        for &(pos, count) in &self.injected_spans {
            for flag in injected.iter_mut().skip(pos).take(count) {
                *flag = true;
            }
        }
        self.poisoned_tokens
            .tokens
            .iter()
            .zip(&injected)
            .filter(|(_, &inj)| !inj)
            .map(|(t, _)| t.clone())
            .collect()
    }

    fn id_for(attack: AttackKind, query_id: &str, base_id: &str) -> String {
        format!("poison-{}-{}-{}", attack.as_str(), query_id, base_id)
    }
}

/// Inserts the query verbatim into the base document at the given position.
pub fn query_as_poison(
    query: &TokenSeq,
    base_doc: &TokenSeq,
    position: InsertPosition,
    embedder: &dyn Embedder,
) -> Result<PoisonRecord> {
    if query.is_empty() {
        return Err(Error::usage("query_as_poison requires a nonempty query"));
    }
    let at = match position {
        InsertPosition::Prepend => 0,
        InsertPosition::Append => base_doc.len(),
        InsertPosition::Middle => base_doc.len() / 2,
    };
    let mut tokens = Vec::with_capacity(base_doc.len() + query.len());
    tokens.extend(base_doc.tokens[..at].iter().cloned());
    tokens.extend(query.tokens.iter().cloned());
    tokens.extend(base_doc.tokens[at..].iter().cloned());
    let poisoned_tokens = TokenSeq::new(tokens, base_doc.source_id.clone());

    let poisoned_emb = embedder.embed_tokens(&poisoned_tokens)?;
    let query_emb = embedder.embed_tokens(query)?;
    let achieved_similarity = similarity(&poisoned_emb, &query_emb)?;

    Ok(PoisonRecord {
        poison_id: PoisonRecord::id_for(AttackKind::QueryAsPoison, &query.source_id, &base_doc.source_id),
        base_doc_id: base_doc.source_id.clone(),
        target_query_id: query.source_id.clone(),
        attack: AttackKind::QueryAsPoison,
        injected_spans: vec![(at, query.len())],
        poisoned_tokens,
        achieved_similarity,
    })
}

/// A poison-crafting strategy.
pub trait PoisonAttack: Send + Sync {
    fn name(&self) -> &'static str;
    fn craft(
        &self,
        query: &TokenSeq,
        base_doc: &TokenSeq,
        embedder: &dyn Embedder,
    ) -> Result<PoisonRecord>;
}

struct QueryAsPoisonAttack {
    position: InsertPosition,
}

impl PoisonAttack for QueryAsPoisonAttack {
    fn name(&self) -> &'static str {
        "query_as_poison"
    }

    fn craft(
        &self,
        query: &TokenSeq,
        base_doc: &TokenSeq,
        embedder: &dyn Embedder,
    ) -> Result<PoisonRecord> {
        query_as_poison(query, base_doc, self.position, embedder)
    }
}

struct GreedyAttack {
    vocab: Vec<String>,
    budget: AttackBudget,
    mode: GreedyMode,
}

impl PoisonAttack for GreedyAttack {
    fn name(&self) -> &'static str {
        match self.mode {
            GreedyMode::Concentrated => "greedy",
            GreedyMode::Spread => "greedy_spread",
        }
    }

    fn craft(
        &self,
        query: &TokenSeq,
        base_doc: &TokenSeq,
        embedder: &dyn Embedder,
    ) -> Result<PoisonRecord> {
        let query_emb = embedder.embed_tokens(query)?;
        let mut record = greedy_flip(
            &query_emb,
            base_doc,
            &self.vocab,
            &self.budget,
            self.mode,
            embedder,
        )?;
        record.target_query_id = query.source_id.clone();
        record.poison_id =
            PoisonRecord::id_for(record.attack, &query.source_id, &base_doc.source_id);
        Ok(record)
    }
}

/// Declarative attack selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    QueryAsPoison {
        #[serde(default)]
        position: InsertPosition,
    },
    Greedy {
        vocab: Vec<String>,
        budget: AttackBudget,
    },
    GreedySpread {
        vocab: Vec<String>,
        budget: AttackBudget,
    },
}

/// Registry constructor: builds the attack strategy named by `spec`.
pub fn build_attack(spec: &AttackSpec) -> Result<Box<dyn PoisonAttack>> {
    match spec {
        AttackSpec::QueryAsPoison { position } => Ok(Box::new(QueryAsPoisonAttack {
            position: *position,
        })),
        AttackSpec::Greedy { vocab, budget } => {
            budget.validate()?;
            validate_vocab(vocab)?;
            Ok(Box::new(GreedyAttack {
                vocab: vocab.clone(),
                budget: budget.clone(),
                mode: GreedyMode::Concentrated,
            }))
        }
        AttackSpec::GreedySpread { vocab, budget } => {
            budget.validate()?;
            validate_vocab(vocab)?;
            Ok(Box::new(GreedyAttack {
                vocab: vocab.clone(),
                budget: budget.clone(),
                mode: GreedyMode::Spread,
            }))
        }
    }
}

/// Names accepted by [`build_attack`].
pub fn attack_names() -> &'static [&'static str] {
    &["query_as_poison", "greedy", "greedy_spread"]
}

fn validate_vocab(vocab: &[String]) -> Result<()> {
    if vocab.is_empty() {
        return Err(Error::usage("attack vocabulary must be nonempty"));
    }
    if vocab
        .iter()
        .any(|t| t.is_empty() || t.chars().any(char::is_whitespace))
    {
        return Err(Error::usage(
            "vocabulary tokens must be nonempty and whitespace-free",
        ));
    }
    Ok(())
}

/// One line of the poison manifest JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonManifestEntry {
    pub poison_id: String,
    pub target_query_id: String,
    pub attack: AttackKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected_spans: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_similarity: Option<f32>,
}

impl From<&PoisonRecord> for PoisonManifestEntry {
    fn from(r: &PoisonRecord) -> Self {
        PoisonManifestEntry {
            poison_id: r.poison_id.clone(),
            target_query_id: r.target_query_id.clone(),
            attack: r.attack,
            text: r.poisoned_tokens.text(),
            base_doc_id: Some(r.base_doc_id.clone()),
            injected_spans: Some(r.injected_spans.clone()),
            achieved_similarity: Some(r.achieved_similarity),
        }
    }
}

/// Appends the poisons to a copy of the corpus and returns the manifest used
/// for ASR scoring. The original corpus is untouched.
pub fn inject(
    corpus: &Corpus,
    poisons: &[PoisonRecord],
) -> Result<(Corpus, Vec<PoisonManifestEntry>)> {
    let mut poisoned = corpus.clone();
    let mut manifest = Vec::with_capacity(poisons.len());
    for p in poisons {
        if poisoned.docs.contains_key(&p.poison_id) {
            return Err(Error::usage(format!(
                "poison id {} collides with an existing document",
                p.poison_id
            )));
        }
        poisoned.docs.insert(
            p.poison_id.clone(),
            CorpusDoc {
                title: String::new(),
                text: p.poisoned_tokens.text(),
            },
        );
        manifest.push(PoisonManifestEntry::from(p));
    }
    Ok((poisoned, manifest))
}

/// Writes a manifest as JSONL.
pub fn save_manifest(path: &Path, entries: &[PoisonManifestEntry]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for entry in entries {
        serde_json::to_writer(&mut w, &serde_json::to_value(entry)?)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a manifest JSONL; tolerates minimal external files carrying only
/// `poison_id`/`query_id` and `text`.
pub fn load_manifest(path: &Path) -> Result<Vec<PoisonManifestEntry>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: PoisonManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::parse(i + 1, format!("poison manifest: {e}")))?;
        out.push(entry);
    }
    Ok(out)
}

/// Rehydrates records from manifest entries for corpus injection. Spans and
/// similarity are carried through when the manifest has them.
pub fn records_from_manifest(entries: &[PoisonManifestEntry]) -> Vec<PoisonRecord> {
    entries
        .iter()
        .map(|entry| {
            let poisoned_tokens =
                crate::embed::tokenize_with_id(&entry.text, entry.poison_id.clone());
            let len = poisoned_tokens.len();
            PoisonRecord {
                poison_id: entry.poison_id.clone(),
                base_doc_id: entry.base_doc_id.clone().unwrap_or_default(),
                target_query_id: entry.target_query_id.clone(),
                attack: entry.attack,
                injected_spans: entry.injected_spans.clone().unwrap_or(vec![(0, len)]),
                poisoned_tokens,
                achieved_similarity: entry.achieved_similarity.unwrap_or(0.0),
            }
        })
        .collect()
}

/// Turns externally generated poisons (e.g. LLM paraphrase attacks) into
/// records with `attack = external`. The whole text counts as injected on an
/// empty base; similarity is computed when the target query is known.
pub fn ingest_external(
    entries: &[PoisonManifestEntry],
    queries: &BTreeMap<String, TokenSeq>,
    embedder: &dyn Embedder,
) -> Result<Vec<PoisonRecord>> {
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        let poisoned_tokens =
            crate::embed::tokenize_with_id(&entry.text, entry.poison_id.clone());
        let achieved_similarity = match queries.get(&entry.target_query_id) {
            Some(query) => {
                let q = embedder.embed_tokens(query)?;
                let d = embedder.embed_tokens(&poisoned_tokens)?;
                similarity(&d, &q)?
            }
            None => 0.0,
        };
        let len = poisoned_tokens.len();
        out.push(PoisonRecord {
            poison_id: entry.poison_id.clone(),
            base_doc_id: String::new(),
            target_query_id: entry.target_query_id.clone(),
            attack: AttackKind::External,
            injected_spans: vec![(0, len)],
            poisoned_tokens,
            achieved_similarity,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::reference::{embed_reference, ReferenceEmbedder};
    use crate::embed::{tokenize_with_id, EmbedderConfig};

    fn embedder() -> ReferenceEmbedder {
        ReferenceEmbedder::new(EmbedderConfig::reference(512))
    }

    #[test]
    fn prepend_puts_query_first() {
        let e = embedder();
        let query = tokenize_with_id("where is mount everest", "q1");
        let base = tokenize_with_id("stocks rose early in frankfurt trading", "d9");
        let got = query_as_poison(&query, &base, InsertPosition::Prepend, &e).unwrap();
        assert_eq!(&got.poisoned_tokens.tokens[..4], &query.tokens[..]);
        assert_eq!(got.injected_spans, vec![(0, 4)]);
        assert_eq!(got.strip_injected(), base.tokens);
        assert_eq!(got.base_doc_id, "d9");
        assert_eq!(got.target_query_id, "q1");
    }

    #[test]
    fn middle_and_append_round_trip() {
        let e = embedder();
        let query = tokenize_with_id("a b", "q");
        let base = tokenize_with_id("one two three four five", "d");
        for pos in [InsertPosition::Middle, InsertPosition::Append] {
            let got = query_as_poison(&query, &base, pos, &e).unwrap();
            assert_eq!(got.strip_injected(), base.tokens);
            assert_eq!(got.poisoned_tokens.len(), 7);
        }
    }

    #[test]
    fn empty_base_yields_query_itself() {
        let e = embedder();
        let query = tokenize_with_id("just the query", "q");
        let base = TokenSeq::new(vec![], "empty");
        let got = query_as_poison(&query, &base, InsertPosition::Prepend, &e).unwrap();
        assert_eq!(got.poisoned_tokens.tokens, query.tokens);
        assert!(got.strip_injected().is_empty());
    }

    #[test]
    fn unigram_similarity_gain_is_query_self_similarity() {
        // Additivity oracle: inserting the query adds exactly sim(q, q).
        let cfg = EmbedderConfig::reference_unigram(512);
        let e = ReferenceEmbedder::new(cfg.clone());
        let query = tokenize_with_id("solar panel efficiency record", "q");
        let base = tokenize_with_id("the cafe serves breakfast until noon daily", "d");
        let q_emb = embed_reference(&query, &cfg);
        let base_sim =
            similarity(&embed_reference(&base, &cfg), &q_emb).unwrap();
        let got = query_as_poison(&query, &base, InsertPosition::Append, &e).unwrap();
        let self_sim = similarity(&q_emb, &q_emb).unwrap();
        assert_eq!(got.achieved_similarity, base_sim + self_sim);
    }

    #[test]
    fn inject_appends_and_reports_manifest() {
        let e = embedder();
        let mut corpus = Corpus::default();
        for i in 0..4 {
            corpus.docs.insert(
                format!("d{i}"),
                CorpusDoc {
                    title: String::new(),
                    text: format!("document number {i}"),
                },
            );
        }
        let query = tokenize_with_id("some query", "q0");
        let base = corpus.tokens("d0").unwrap();
        let p = query_as_poison(&query, &base, InsertPosition::Prepend, &e).unwrap();
        let (poisoned, manifest) = inject(&corpus, &[p.clone()]).unwrap();
        assert_eq!(poisoned.docs.len(), 5);
        assert_eq!(corpus.docs.len(), 4);
        assert_eq!(manifest.len(), 1);
        assert_eq!(manifest[0].target_query_id, "q0");
        // Round-trip through the corpus text preserves the token stream.
        assert_eq!(
            poisoned.tokens(&p.poison_id).unwrap().tokens,
            p.poisoned_tokens.tokens
        );
    }

    #[test]
    fn inject_rejects_id_collision() {
        let e = embedder();
        let mut corpus = Corpus::default();
        corpus.docs.insert(
            "d0".into(),
            CorpusDoc {
                title: String::new(),
                text: "hello world".into(),
            },
        );
        let query = tokenize_with_id("q tokens", "q0");
        let base = corpus.tokens("d0").unwrap();
        let mut p = query_as_poison(&query, &base, InsertPosition::Prepend, &e).unwrap();
        p.poison_id = "d0".into();
        assert!(inject(&corpus, &[p]).is_err());
    }

    #[test]
    fn inject_empty_list_is_noop() {
        let corpus = Corpus::default();
        let (poisoned, manifest) = inject(&corpus, &[]).unwrap();
        assert_eq!(poisoned.docs.len(), 0);
        assert!(manifest.is_empty());
    }

    #[test]
    fn paper_scale_injection_grows_corpus_by_1536() {
        // 512 queries x 3 poisons per query.
        let e = embedder();
        let mut corpus = Corpus::default();
        for i in 0..600 {
            corpus.docs.insert(
                format!("d{i:04}"),
                CorpusDoc {
                    title: String::new(),
                    text: format!("background text {i}"),
                },
            );
        }
        let mut poisons = Vec::new();
        for q in 0..512 {
            let query = tokenize_with_id(&format!("query number {q}"), format!("q{q:03}"));
            for b in 0..3 {
                let base_id = format!("d{:04}", (q * 3 + b) % 600);
                let base = corpus.tokens(&base_id).unwrap();
                let mut p =
                    query_as_poison(&query, &base, InsertPosition::Prepend, &e).unwrap();
                p.poison_id = format!("p{q:03}_{b}");
                poisons.push(p);
            }
        }
        let (poisoned, manifest) = inject(&corpus, &poisons).unwrap();
        assert_eq!(poisoned.docs.len(), 600 + 1536);
        assert_eq!(manifest.len(), 1536);
    }

    #[test]
    fn manifest_round_trips_and_ingests_external() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poisons.jsonl");
        let entries = vec![PoisonManifestEntry {
            poison_id: "ext-1".into(),
            target_query_id: "q7".into(),
            attack: AttackKind::External,
            text: "Payload crafted elsewhere targeting q7".into(),
            base_doc_id: None,
            injected_spans: None,
            achieved_similarity: None,
        }];
        save_manifest(&path, &entries).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded, entries);

        let e = embedder();
        let mut queries = BTreeMap::new();
        queries.insert("q7".to_string(), tokenize_with_id("some query", "q7"));
        let records = ingest_external(&loaded, &queries, &e).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].attack, AttackKind::External);
        assert!(records[0].strip_injected().is_empty());
    }
}
