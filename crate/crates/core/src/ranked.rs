//! Ranked result lists shared by every retriever and re-ranker.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Ordered `(doc_id, score)` results for one question.
///
/// Lists produced by [`RankedList::from_scored`] have non-increasing scores,
/// unique doc ids, and equal scores ordered by doc id ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub question_id: String,
    pub retriever_id: String,
    pub entries: Vec<RankedEntry>,
}

/// Descending score, then ascending doc id.
pub fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
}

impl RankedList {
    pub fn new(question_id: impl Into<String>, retriever_id: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            retriever_id: retriever_id.into(),
            entries: Vec::new(),
        }
    }

    /// Sorts candidates by the ranking rule and keeps the first `k`.
    pub fn from_scored(
        question_id: impl Into<String>,
        retriever_id: impl Into<String>,
        mut scored: Vec<(String, f64)>,
        k: usize,
    ) -> Self {
        scored.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
        scored.truncate(k);
        Self {
            question_id: question_id.into(),
            retriever_id: retriever_id.into(),
            entries: scored
                .into_iter()
                .map(|(doc_id, score)| RankedEntry { doc_id, score })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.doc_id.as_str()).collect()
    }

    pub fn truncated(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.entries.truncate(k);
        out
    }

    /// Checks the ordering invariants. Re-rankers emit lists that are not
    /// score-sorted, so this is only meaningful for base retrieval output.
    pub fn is_well_ordered(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        if !self.entries.iter().all(|e| seen.insert(e.doc_id.as_str())) {
            return false;
        }
        self.entries.windows(2).all(|w| {
            rank_order((&w[0].doc_id, w[0].score), (&w[1].doc_id, w[1].score)) != Ordering::Greater
        })
    }
}

/// Reads a runs file: one [`RankedList`] JSON object per line.
pub fn read_runs(path: &Path) -> Result<Vec<RankedList>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_runs(path: &Path, lists: &[RankedList]) -> Result<()> {
    let mut out = String::new();
    for l in lists {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
