//! Exact top-p inner-product retrieval over per-combination embedding
//! databases, with bit-exact on-disk persistence.
//!
//! One logical database per `combo_id`; scoring is exact brute force, so
//! ranking semantics are never confounded by approximation. Ties break by
//! ascending `doc_id`, making retrieval a pure function.
//!
//! ## `RGSIDX1` file format (little-endian)
//!
//! ```text
//! magic      7 bytes  b"RGSIDX1"
//! dim        u32
//! entries    u64
//! n          u32
//! k          u32
//! method     u8       0 = full, 1 = ragpart, 2 = naive
//! fingerprint u64     hash of the EmbedderConfig that produced the vectors
//! per entry:
//!   doc_id_len u32, doc_id bytes (UTF-8), combo_id u32, dim * f32
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"RGSIDX1";

/// How the stored vectors were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMethod {
    /// One raw full-document embedding per doc (`combo_id = 0`).
    Full,
    /// Mean-pooled fragment-combination embeddings.
    Ragpart,
    /// Concatenate-then-embed combination embeddings.
    Naive,
}

impl IndexMethod {
    fn code(self) -> u8 {
        match self {
            IndexMethod::Full => 0,
            IndexMethod::Ragpart => 1,
            IndexMethod::Naive => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(IndexMethod::Full),
            1 => Ok(IndexMethod::Ragpart),
            2 => Ok(IndexMethod::Naive),
            other => Err(Error::format(format!("unknown index method code {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IndexMethod::Full => "full",
            IndexMethod::Ragpart => "ragpart",
            IndexMethod::Naive => "naive",
        }
    }
}

/// One (document, combination) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub doc_id: String,
    pub combo_id: u32,
    pub vector: Embedding,
}

/// Index metadata persisted in the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub dim: usize,
    pub entries: u64,
    pub n: u32,
    pub k: u32,
    pub method: IndexMethod,
    pub embedder_fingerprint: u64,
}

/// A ranked retrieval result: `(doc_id, score)` descending by score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<(String, f32)>,
}

impl RankedList {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug)]
struct ComboDb {
    doc_ids: Vec<String>,
    // Row-major dim-strided vectors, one row per doc.
    vectors: Vec<f32>,
}

/// Immutable exact-scoring index partitioned by `combo_id`.
#[derive(Debug)]
pub struct VectorIndex {
    header: IndexHeader,
    combos: BTreeMap<u32, ComboDb>,
}

impl VectorIndex {
    /// Builds an index from entries, validating uniform dimension and
    /// `(doc_id, combo_id)` uniqueness.
    pub fn build(
        entries: Vec<IndexEntry>,
        n: u32,
        k: u32,
        method: IndexMethod,
        embedder_fingerprint: u64,
    ) -> Result<Self> {
        let dim = entries.first().map_or(0, |e| e.vector.dim());
        let mut grouped: BTreeMap<u32, Vec<(String, Vec<f32>)>> = BTreeMap::new();
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        let total = entries.len() as u64;
        for entry in entries {
            if entry.vector.dim() != dim {
                return Err(Error::build(format!(
                    "entry ({}, {}) has dimension {}, expected {}",
                    entry.doc_id,
                    entry.combo_id,
                    entry.vector.dim(),
                    dim
                )));
            }
            entry.vector.validate().map_err(|e| {
                Error::build(format!(
                    "entry ({}, {}): {e}",
                    entry.doc_id, entry.combo_id
                ))
            })?;
            if !seen.insert((entry.doc_id.clone(), entry.combo_id)) {
                return Err(Error::build(format!(
                    "duplicate entry ({}, {})",
                    entry.doc_id, entry.combo_id
                )));
            }
            grouped
                .entry(entry.combo_id)
                .or_default()
                .push((entry.doc_id, entry.vector.values));
        }
        let mut combos = BTreeMap::new();
        for (combo_id, mut rows) in grouped {
            // Stable doc order inside each database keeps scoring loops and
            // tie-breaking deterministic.
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            let mut doc_ids = Vec::with_capacity(rows.len());
            let mut vectors = Vec::with_capacity(rows.len() * dim);
            for (doc_id, values) in rows {
                doc_ids.push(doc_id);
                vectors.extend_from_slice(&values);
            }
            combos.insert(combo_id, ComboDb { doc_ids, vectors });
        }
        Ok(Self {
            header: IndexHeader {
                dim,
                entries: total,
                n,
                k,
                method,
                embedder_fingerprint,
            },
            combos,
        })
    }

    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn len(&self) -> u64 {
        self.header.entries
    }

    pub fn is_empty(&self) -> bool {
        self.header.entries == 0
    }

    /// Combo ids present, ascending.
    pub fn combo_ids(&self) -> Vec<u32> {
        self.combos.keys().copied().collect()
    }

    /// Number of documents stored under one combo id.
    pub fn combo_len(&self, combo_id: u32) -> usize {
        self.combos.get(&combo_id).map_or(0, |db| db.doc_ids.len())
    }

    /// The `p` highest-inner-product documents within one combination
    /// database. Ties break by ascending doc id.
    pub fn top_p(&self, combo_id: u32, query: &Embedding, p: usize) -> Result<RankedList> {
        if p == 0 {
            return Err(Error::usage("p must be >= 1"));
        }
        if self.is_empty() {
            return Ok(RankedList { entries: vec![] });
        }
        let db = self
            .combos
            .get(&combo_id)
            .ok_or_else(|| Error::usage(format!("unknown combo_id {combo_id}")))?;
        if query.dim() != self.header.dim {
            return Err(Error::usage(format!(
                "query dimension {} does not match index dimension {}",
                query.dim(),
                self.header.dim
            )));
        }
        let dim = self.header.dim;
        let mut scored: Vec<(usize, f32)> = Vec::with_capacity(db.doc_ids.len());
        for (row, _) in db.doc_ids.iter().enumerate() {
            let start = row * dim;
            let vec = &db.vectors[start..start + dim];
            let mut acc = 0.0f32;
            for (x, y) in vec.iter().zip(&query.values) {
                acc += x * y;
            }
            scored.push((row, acc));
        }
        // Descending score; doc ids are pre-sorted ascending so equal scores
        // resolve to the lower id.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(p);
        Ok(RankedList {
            entries: scored
                .into_iter()
                .map(|(row, score)| (db.doc_ids[row].clone(), score))
                .collect(),
        })
    }

    /// Iterates all entries in (combo_id, doc_id) order.
    pub fn entries(&self) -> impl Iterator<Item = IndexEntry> + '_ {
        let dim = self.header.dim;
        self.combos.iter().flat_map(move |(&combo_id, db)| {
            db.doc_ids.iter().enumerate().map(move |(row, doc_id)| {
                let start = row * dim;
                IndexEntry {
                    doc_id: doc_id.clone(),
                    combo_id,
                    vector: Embedding::new(db.vectors[start..start + dim].to_vec()),
                }
            })
        })
    }

    /// Writes the `RGSIDX1` binary form; the round trip through
    /// [`VectorIndex::load`] is bit-exact.
    pub fn persist(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.header.dim as u32).to_le_bytes())?;
        w.write_all(&self.header.entries.to_le_bytes())?;
        w.write_all(&self.header.n.to_le_bytes())?;
        w.write_all(&self.header.k.to_le_bytes())?;
        w.write_all(&[self.header.method.code()])?;
        w.write_all(&self.header.embedder_fingerprint.to_le_bytes())?;
        for entry in self.entries() {
            let id_bytes = entry.doc_id.as_bytes();
            w.write_all(&(id_bytes.len() as u32).to_le_bytes())?;
            w.write_all(id_bytes)?;
            w.write_all(&entry.combo_id.to_le_bytes())?;
            for v in &entry.vector.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads and fully validates an `RGSIDX1` file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 7];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::format("bad magic, not an RGSIDX1 file".to_string()));
        }
        let dim = read_u32(&mut r, "dim")? as usize;
        let entries = read_u64(&mut r, "entry count")?;
        let n = read_u32(&mut r, "n")?;
        let k = read_u32(&mut r, "k")?;
        let mut method_code = [0u8; 1];
        read_exact(&mut r, &mut method_code, "method")?;
        let method = IndexMethod::from_code(method_code[0])?;
        let fingerprint = read_u64(&mut r, "fingerprint")?;

        let mut out = Vec::with_capacity(entries.min(1 << 20) as usize);
        for i in 0..entries {
            let id_len = read_u32(&mut r, "doc id length")? as usize;
            let mut id_bytes = vec![0u8; id_len];
            read_exact(&mut r, &mut id_bytes, "doc id")?;
            let doc_id = String::from_utf8(id_bytes)
                .map_err(|_| Error::format(format!("entry {i}: doc id is not UTF-8")))?;
            let combo_id = read_u32(&mut r, "combo id")?;
            let mut values = Vec::with_capacity(dim);
            let mut buf = [0u8; 4];
            for _ in 0..dim {
                read_exact(&mut r, &mut buf, "vector data")?;
                values.push(f32::from_le_bytes(buf));
            }
            out.push(IndexEntry {
                doc_id,
                combo_id,
                vector: Embedding::new(values),
            });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::format("trailing bytes after final entry".to_string()));
        }
        let mut index = Self::build(out, n, k, method, fingerprint)?;
        if entries == 0 {
            index.header.dim = dim;
        } else if index.header.dim != dim {
            return Err(Error::format(format!(
                "header dimension {dim} does not match entry dimension {}",
                index.header.dim
            )));
        }
        Ok(index)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(format!("truncated file while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}
