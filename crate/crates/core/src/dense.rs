//! Embedding retrieval: provider abstraction, a feature-hashing embedder for
//! offline runs, and exact cosine top-k.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::ranked::RankedList;
use crate::sparse::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// All-zero vectors carry no direction; similarity against them is 0.
    pub fn is_degenerate(&self) -> bool {
        self.norm() == 0.0
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self::new(self.values.iter().map(|v| v / n).collect())
    }
}

/// Cosine similarity; 0 when either side is degenerate.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Text embedder. Implementations must map identical text to identical
/// vectors for a fixed provider version.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    /// Declared dimensionality, or 0 when only known after the first call.
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed feature hashing over [`tokenize`] tokens, L2-normalized.
///
/// Text without tokens maps to the zero vector. Panics if `dim` is 0; use
/// [`HashEmbedder::new`] for a checked constructor.
pub fn hash_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim > 0, "hash_embed needs dim > 0");
    let mut values = vec![0.0; dim];
    for tok in tokenize(text) {
        let bucket = (fnv1a(tok.as_bytes(), 0) % dim as u64) as usize;
        let sign = if fnv1a(tok.as_bytes(), 0x9e37_79b9_7f4a_7c15) & 1 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign;
    }
    EmbeddingVector::new(values).normalized()
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    id: String,
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 8 {
            return Err(Error::Precondition(format!("hash embedder needs dim >= 8, got {dim}")));
        }
        Ok(Self {
            id: format!("hash-{dim}"),
            dim,
        })
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| hash_embed(t, self.dim)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    pub provider_id: String,
    pub dim: usize,
    pub normalized: bool,
    doc_ids: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl DenseIndex {
    pub fn from_rows(provider_id: impl Into<String>, doc_ids: Vec<String>, rows: Vec<EmbeddingVector>) -> Result<Self> {
        if doc_ids.len() != rows.len() {
            return Err(Error::Validation(format!(
                "{} doc ids but {} vectors",
                doc_ids.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map_or(0, EmbeddingVector::dim);
        if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(Self {
            provider_id: provider_id.into(),
            dim,
            normalized: true,
            doc_ids,
            rows: rows.into_iter().map(|r| r.normalized().values).collect(),
        })
    }

    /// Embeds every passage in batches of `batch_size`.
    pub fn build(corpus: &Corpus, provider: &dyn EmbeddingProvider, batch_size: usize) -> Result<Self> {
        let texts: Vec<String> = corpus.passages().iter().map(|p| p.text.clone()).collect();
        let batches: Vec<Vec<EmbeddingVector>> = texts
            .par_chunks(batch_size.max(1))
            .map(|chunk| provider.embed_batch(chunk))
            .collect::<Result<_>>()?;
        let doc_ids = corpus.passages().iter().map(|p| p.doc_id.clone()).collect();
        Self::from_rows(provider.id(), doc_ids, batches.into_iter().flatten().collect())
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Exact cosine top-`k` by full scan.
pub fn dense_search(index: &DenseIndex, question_id: &str, query: &EmbeddingVector, k: usize) -> Result<RankedList> {
    if !index.is_empty() && query.dim() != index.dim {
        return Err(Error::DimMismatch {
            expected: index.dim,
            got: query.dim(),
        });
    }
    let scored = index
        .doc_ids
        .iter()
        .zip(&index.rows)
        .map(|(id, row)| (id.clone(), cosine(&query.values, row)))
        .collect();
    Ok(RankedList::from_scored(question_id, index.provider_id.clone(), scored, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embed_is_deterministic_and_unit() {
        let a = hash_embed("a b c", 64);
        assert_eq!(a, hash_embed("a b c", 64));
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!((cosine(&a.values, &hash_embed("a b c", 64).values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_degenerate() {
        let z = hash_embed("", 16);
        assert!(z.is_degenerate());
        assert_eq!(cosine(&z.values, &hash_embed("x", 16).values), 0.0);
    }

    #[test]
    fn embedder_checks_dim() {
        assert!(HashEmbedder::new(4).is_err());
        assert!(HashEmbedder::new(8).is_ok());
    }

    fn index(rows: Vec<Vec<f64>>) -> DenseIndex {
        let ids = (0..rows.len()).map(|i| format!("d{i}")).collect();
        DenseIndex::from_rows("t", ids, rows.into_iter().map(EmbeddingVector::new).collect()).unwrap()
    }

    #[test]
    fn self_match_ranks_first() {
        let idx = index(vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0]]);
        let out = dense_search(&idx, "q", &EmbeddingVector::new(vec![0.6, 0.8]), 3).unwrap();
        assert_eq!(out.entries[0].doc_id, "d1");
        assert!((out.entries[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_query_orders_by_id() {
        let idx = index(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let out = dense_search(&idx, "q", &EmbeddingVector::new(vec![1.0, 0.0, 0.0]), 2).unwrap();
        assert_eq!(out.doc_ids(), vec!["d0", "d1"]);
        assert!(out.entries.iter().all(|e| e.score == 0.0));
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let idx = index(vec![vec![1.0, 0.0]]);
        assert!(matches!(
            dense_search(&idx, "q", &EmbeddingVector::new(vec![1.0]), 1),
            Err(Error::DimMismatch { .. })
        ));
    }
}
