//! BM25 over an in-memory inverted index.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·dl/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are summed as given, so a repeated query term counts twice.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::ranked::RankedList;

pub const INDEX_FORMAT: &str = "divret-bm25";
pub const INDEX_VERSION: u32 = 1;

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Self-describing on disk: `format` and `version` head the JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    format: String,
    version: u32,
    pub params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Self {
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (i, p) in corpus.passages().iter().enumerate() {
            let terms = tokenize(&p.text);
            doc_ids.push(p.doc_id.clone());
            doc_lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: i as u32,
                    tf: count,
                });
            }
        }
        let avgdl = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64
        };
        Self {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            params,
            doc_ids,
            doc_lengths,
            avgdl,
            postings,
        }
    }

    pub fn n(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, doc: usize) -> u32 {
        self.doc_lengths[doc]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n() as f64;
        let df = self.postings(term).len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let dl = self.doc_lengths[doc] as f64;
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avgdl))
    }

    /// Score of one passage (by position in the index) for pre-tokenized terms.
    pub fn bm25_score(&self, query_terms: &[String], doc: usize) -> f64 {
        query_terms
            .iter()
            .map(|t| {
                self.postings(t)
                    .iter()
                    .find(|p| p.doc as usize == doc)
                    .map_or(0.0, |p| self.idf(t) * self.term_weight(p.tf, doc))
            })
            .sum()
    }

    /// Top-`k` passages with positive score. Ties go to the smaller doc id.
    pub fn search(&self, question_id: &str, query: &str, k: usize) -> RankedList {
        self.search_as(question_id, "bm25", query, k)
    }

    pub fn search_as(&self, question_id: &str, retriever_id: &str, query: &str, k: usize) -> RankedList {
        let terms = tokenize(query);
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for t in &terms {
            let idf = self.idf(t);
            for p in self.postings(t) {
                *acc.entry(p.doc).or_insert(0.0) += idf * self.term_weight(p.tf, p.doc as usize);
            }
        }
        let scored = acc
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(d, s)| (self.doc_ids[d as usize].clone(), s))
            .collect();
        RankedList::from_scored(question_id, retriever_id, scored, k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let idx: Self = serde_json::from_str(text)?;
        if idx.format != INDEX_FORMAT || idx.version != INDEX_VERSION {
            return Err(Error::Validation(format!(
                "unsupported index format {} v{}",
                idx.format, idx.version
            )));
        }
        if idx.doc_ids.len() != idx.doc_lengths.len() {
            return Err(Error::Validation("doc_ids and doc_lengths differ in length".into()));
        }
        let n = idx.n() as u32;
        if idx.postings.values().flatten().any(|p| p.doc >= n) {
            return Err(Error::Validation("posting references unknown passage".into()));
        }
        Ok(idx)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, CorpusScope, Passage};

    pub(crate) fn corpus(docs: &[(&str, &str)]) -> Corpus {
        let passages = docs
            .iter()
            .map(|(id, text)| Passage {
                doc_id: id.to_string(),
                text: text.to_string(),
                word_count: text.split_whitespace().count(),
                parent_doc: id.to_string(),
                offset: 0,
                source_url: None,
            })
            .collect();
        Corpus::from_passages("t", CorpusScope::Shared, passages).unwrap()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("ChatGPT will do more harm!"), vec!["chatgpt", "will", "do", "more", "harm"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A-B_c"), vec!["a", "b", "c"]);
    }

    #[test]
    fn postings_cover_shared_term() {
        let idx = InvertedIndex::build(&corpus(&[("1", "a x"), ("2", "a y"), ("3", "a")]), Bm25Params::default());
        assert_eq!(idx.postings("a").len(), 3);
        assert_eq!(idx.n(), 3);
        assert!((idx.avgdl() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = InvertedIndex::build(&corpus(&[]), Bm25Params::default());
        assert_eq!(idx.n(), 0);
        assert!(idx.search("q", "anything", 5).is_empty());
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let c = corpus(&[("1", "a b c"), ("2", "c d"), ("3", "e a a")]);
        let a = InvertedIndex::build(&c, Bm25Params::default()).to_json().unwrap();
        let b = InvertedIndex::build(&c, Bm25Params::default()).to_json().unwrap();
        assert_eq!(a, b);
        let back = InvertedIndex::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
    }

    #[test]
    fn rejects_foreign_format() {
        let json = r#"{"format":"other","version":1,"params":{"k1":1,"b":1},"doc_ids":[],"doc_lengths":[],"avgdl":0,"postings":{}}"#;
        assert!(InvertedIndex::from_json(json).is_err());
    }

    #[test]
    fn symmetric_tie_breaks_by_doc_id() {
        let idx = InvertedIndex::build(&corpus(&[("d1", "a b"), ("d2", "a c"), ("d3", "c d")]), Bm25Params::default());
        let q = tokenize("a");
        assert_eq!(idx.bm25_score(&q, 0), idx.bm25_score(&q, 1));
        assert_eq!(idx.search("q", "a", 10).doc_ids(), vec!["d1", "d2"]);
    }

    #[test]
    fn absent_term_scores_zero() {
        let idx = InvertedIndex::build(&corpus(&[("d1", "a b"), ("d2", "a c")]), Bm25Params::default());
        let q = tokenize("zzz");
        assert_eq!(idx.bm25_score(&q, 0), 0.0);
        assert!(idx.search("q", "zzz", 3).is_empty());
    }
}
