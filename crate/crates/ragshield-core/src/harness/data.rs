//! Corpus, query and qrels ingestion in the usual retrieval-benchmark
//! formats: JSONL corpora (`{"_id", "title", "text"}`), JSONL queries
//! (`{"_id", "text"}`) and tab-separated qrels
//! (`query_id <TAB> doc_id <TAB> relevance`).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::defense::DocStore;
use crate::embed::{tokenize_with_id, TokenSeq};
use crate::error::{Error, Result};

/// One corpus document.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusDoc {
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// The retrieval corpus, keyed by document id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub docs: BTreeMap<String, CorpusDoc>,
}

#[derive(Deserialize)]
struct CorpusLine {
    #[serde(rename = "_id")]
    id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    text: String,
}

#[derive(Serialize)]
struct CorpusLineOut<'a> {
    #[serde(rename = "_id")]
    id: &'a str,
    title: &'a str,
    text: &'a str,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Token stream a retriever sees for one document: title then text.
    pub fn tokens(&self, doc_id: &str) -> Option<TokenSeq> {
        let doc = self.docs.get(doc_id)?;
        let combined = if doc.title.is_empty() {
            doc.text.clone()
        } else {
            format!("{} {}", doc.title, doc.text)
        };
        Some(tokenize_with_id(&combined, doc_id))
    }

    /// Loads a JSONL corpus; malformed lines and duplicate ids are fatal.
    pub fn load(path: &Path) -> Result<Corpus> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut docs = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CorpusLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse(i + 1, format!("corpus: {e}")))?;
            if docs
                .insert(
                    parsed.id.clone(),
                    CorpusDoc {
                        title: parsed.title,
                        text: parsed.text,
                    },
                )
                .is_some()
            {
                return Err(Error::parse(
                    i + 1,
                    format!("corpus: duplicate _id {:?}", parsed.id),
                ));
            }
        }
        Ok(Corpus { docs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (id, doc) in &self.docs {
            serde_json::to_writer(
                &mut w,
                &CorpusLineOut {
                    id,
                    title: &doc.title,
                    text: &doc.text,
                },
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

impl DocStore for Corpus {
    fn doc_tokens(&self, doc_id: &str) -> Option<TokenSeq> {
        self.tokens(doc_id)
    }
}

/// One evaluation query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn tokens(&self) -> TokenSeq {
        tokenize_with_id(&self.text, self.id.clone())
    }
}

/// Loads JSONL queries, preserving file order.
pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, format!("queries: {e}")))?;
        if !seen.insert(q.id.clone()) {
            return Err(Error::parse(
                i + 1,
                format!("queries: duplicate _id {:?}", q.id),
            ));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn save_queries(path: &Path, queries: &[Query]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for q in queries {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Query-relevance judgments: query id to the set of golden document ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Qrels {
    pub golden: BTreeMap<String, BTreeSet<String>>,
    /// Rows referencing unknown documents (kept, but reported).
    pub warnings: Vec<String>,
}

impl Qrels {
    pub fn golden_for(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.golden.get(query_id)
    }
}

/// Loads TSV qrels. Rows with relevance <= 0 are ignored; rows referencing
/// documents missing from `corpus` are kept but recorded as warnings. A
/// leading BEIR-style header row is skipped.
pub fn load_qrels(path: &Path, corpus: Option<&Corpus>) -> Result<Qrels> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut qrels = Qrels::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                i + 1,
                format!("qrels: expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let relevance: i64 = match fields[2].trim().parse() {
            Ok(r) => r,
            Err(_) if i == 0 => continue, // header row
            Err(e) => {
                return Err(Error::parse(i + 1, format!("qrels: bad relevance: {e}")));
            }
        };
        if relevance <= 0 {
            continue;
        }
        let (query_id, doc_id) = (fields[0].trim(), fields[1].trim());
        if let Some(corpus) = corpus {
            if !corpus.docs.contains_key(doc_id) {
                qrels
                    .warnings
                    .push(format!("line {}: unknown doc_id {doc_id:?}", i + 1));
            }
        }
        qrels
            .golden
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string());
    }
    Ok(qrels)
}

pub fn save_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (query_id, docs) in &qrels.golden {
        for doc_id in docs {
            writeln!(w, "{query_id}\t{doc_id}\t1")?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(path: &Path, content: &str) {
        std::fs::write(path, content).unwrap();
    }

    #[test]
    fn corpus_loads_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write(
            &p,
            r#"{"_id":"d1","title":"T","text":"alpha beta"}
{"_id":"d2","title":"","text":"gamma"}
{"_id":"d3","text":"delta"}
"#,
        );
        let c = Corpus::load(&p).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.tokens("d1").unwrap().tokens, vec!["t", "alpha", "beta"]);
        assert_eq!(c.tokens("d3").unwrap().tokens, vec!["delta"]);
        assert!(c.tokens("nope").is_none());
    }

    #[test]
    fn corpus_reports_malformed_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write(&p, "{\"_id\":\"d1\",\"text\":\"ok\"}\nnot json\n");
        match Corpus::load(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn corpus_duplicate_id_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write(
            &p,
            "{\"_id\":\"dup\",\"text\":\"a\"}\n{\"_id\":\"dup\",\"text\":\"b\"}\n",
        );
        match Corpus::load(&p) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("dup")),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let mut corpus = Corpus::default();
        corpus.docs.insert(
            "a".into(),
            CorpusDoc {
                title: "Title".into(),
                text: "Some text".into(),
            },
        );
        corpus.save(&p).unwrap();
        assert_eq!(Corpus::load(&p).unwrap(), corpus);
    }

    #[test]
    fn qrels_parse_ignore_and_warn() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c.jsonl");
        write(&c, "{\"_id\":\"d7\",\"text\":\"x\"}\n");
        let corpus = Corpus::load(&c).unwrap();

        let p = dir.path().join("q.tsv");
        write(&p, "q1\td7\t1\nq1\td8\t1\nq2\td7\t0\n");
        let qrels = load_qrels(&p, Some(&corpus)).unwrap();
        assert_eq!(
            qrels.golden_for("q1").unwrap(),
            &BTreeSet::from(["d7".to_string(), "d8".to_string()])
        );
        // Relevance 0 row ignored entirely.
        assert!(qrels.golden_for("q2").is_none());
        // Unknown doc kept but warned about.
        assert_eq!(qrels.warnings.len(), 1);
        assert!(qrels.warnings[0].contains("d8"));
    }

    #[test]
    fn qrels_skip_header_and_report_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.tsv");
        write(&p, "query-id\tcorpus-id\tscore\nq1\td1\t2\n");
        let qrels = load_qrels(&p, None).unwrap();
        assert!(qrels.golden_for("q1").unwrap().contains("d1"));

        let bad = dir.path().join("bad.tsv");
        write(&bad, "q1\td1\t1\nq2\td2\n");
        match load_qrels(&bad, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn queries_load_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        write(
            &p,
            "{\"_id\":\"q2\",\"text\":\"second query\"}\n{\"_id\":\"q1\",\"text\":\"first\"}\n",
        );
        let qs = load_queries(&p).unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].id, "q2");
        assert_eq!(qs[1].tokens().tokens, vec!["first"]);
    }
}
