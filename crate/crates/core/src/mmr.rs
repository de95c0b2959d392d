//! Maximal Marginal Relevance re-ranking.
//!
//! ```text
//! next = argmax_{d ∈ R∖S} [ λ·Sim1(d, q) − (1 − λ)·max_{s ∈ S} Sim2(d, s) ]
//! ```
//!
//! Sim1 is the retriever score divided by the largest score seen over the
//! whole run; Sim2 is cosine between passage embeddings. The max over an
//! empty S is 0, so the first pick is by relevance alone.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dense::{cosine, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::ranked::{RankedEntry, RankedList};

pub const LAMBDA_GRID: [f64; 5] = [0.5, 0.75, 0.9, 0.95, 0.99];
pub const DEFAULT_POOL: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmrConfig {
    pub lambda: f64,
    pub pool_size: usize,
    pub k: usize,
}

impl MmrConfig {
    pub fn new(lambda: f64, pool_size: usize, k: usize) -> Result<Self> {
        let cfg = Self { lambda, pool_size, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Precondition(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.k == 0 || self.k > self.pool_size {
            return Err(Error::Precondition(format!(
                "need 1 <= k <= pool_size, got k={} pool={}",
                self.k, self.pool_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationState {
    pub max_sim1: f64,
}

impl NormalizationState {
    pub fn normalize(&self, score: f64) -> f64 {
        score / self.max_sim1
    }
}

/// Fits the run-wide Sim1 scale: the largest score across all lists.
pub fn fit_normalizer<'a>(lists: impl IntoIterator<Item = &'a RankedList>) -> Result<NormalizationState> {
    let max = lists
        .into_iter()
        .flat_map(|l| l.entries.iter().map(|e| e.score))
        .fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() || max <= 0.0 {
        return Err(Error::Normalize("no positive retriever score in run".into()));
    }
    Ok(NormalizationState { max_sim1: max })
}

struct Candidate<'a> {
    entry: &'a RankedEntry,
    sim1: f64,
    vector: &'a [f64],
    max_sim2: f64,
}

fn better(a: (f64, &Candidate), b: (f64, &Candidate)) -> bool {
    match a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.1.entry.score.partial_cmp(&b.1.entry.score).unwrap_or(Ordering::Equal) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a.1.entry.doc_id < b.1.entry.doc_id,
        },
    }
}

/// Greedy MMR over the top `pool_size` entries of `pool`.
///
/// Output scores are the criterion values at the moment each document was
/// picked. Ties go to the higher raw retriever score, then the smaller doc id.
pub fn mmr_select(
    pool: &RankedList,
    config: &MmrConfig,
    norm: &NormalizationState,
    embeddings: &HashMap<String, EmbeddingVector>,
) -> Result<RankedList> {
    config.validate()?;
    let lambda = config.lambda;
    let mut candidates: Vec<Candidate> = pool
        .entries
        .iter()
        .take(config.pool_size)
        .map(|e| {
            let v = embeddings
                .get(&e.doc_id)
                .ok_or_else(|| Error::MissingEmbedding(e.doc_id.clone()))?;
            Ok(Candidate {
                entry: e,
                sim1: norm.normalize(e.score),
                vector: &v.values,
                max_sim2: 0.0,
            })
        })
        .collect::<Result<_>>()?;

    let mut out = RankedList::new(pool.question_id.clone(), format!("{}+mmr", pool.retriever_id));
    while out.len() < config.k && !candidates.is_empty() {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, c) in candidates.iter().enumerate() {
            let val = lambda * c.sim1 - (1.0 - lambda) * c.max_sim2;
            if i == 0 || better((val, c), (best_val, &candidates[best])) {
                best = i;
                best_val = val;
            }
        }
        let chosen = candidates.swap_remove(best);
        for c in &mut candidates {
            c.max_sim2 = c.max_sim2.max(cosine(c.vector, chosen.vector));
        }
        out.entries.push(RankedEntry {
            doc_id: chosen.entry.doc_id.clone(),
            score: best_val,
        });
    }
    Ok(out)
}

/// Embeds pool passages with the Sim2 provider, then runs [`mmr_select`].
/// `text_of` resolves a doc id to its passage text.
pub fn mmr_rerank<'t>(
    pool: &RankedList,
    config: &MmrConfig,
    norm: &NormalizationState,
    sim2: &dyn EmbeddingProvider,
    text_of: impl Fn(&str) -> Option<&'t str>,
) -> Result<RankedList> {
    let head: Vec<&RankedEntry> = pool.entries.iter().take(config.pool_size).collect();
    let mut ids = Vec::with_capacity(head.len());
    let mut texts = Vec::with_capacity(head.len());
    for e in head {
        let t = text_of(&e.doc_id).ok_or_else(|| Error::MissingEmbedding(e.doc_id.clone()))?;
        ids.push(e.doc_id.clone());
        texts.push(t.to_string());
    }
    let vectors = if texts.is_empty() { Vec::new() } else { sim2.embed_batch(&texts)? };
    let embeddings: HashMap<String, EmbeddingVector> = ids.into_iter().zip(vectors).collect();
    mmr_select(pool, config, norm, &embeddings)
}

/// Picks the grid value with the highest dev score; ties go to the larger λ.
pub fn tune_lambda(grid: &[f64], mut dev_score: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let score = dev_score(lambda)?;
        log::info!("lambda {lambda}: dev score {score:.4}");
        best = match best {
            Some((bl, bs)) if bs > score || (bs == score && bl > lambda) => Some((bl, bs)),
            _ => Some((lambda, score)),
        };
    }
    best.map(|(l, _)| l)
        .ok_or_else(|| Error::Precondition("lambda grid is empty".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::hash_embed;

    fn list(entries: &[(&str, f64)]) -> RankedList {
        RankedList {
            question_id: "q".into(),
            retriever_id: "r".into(),
            entries: entries
                .iter()
                .map(|(d, s)| RankedEntry {
                    doc_id: d.to_string(),
                    score: *s,
                })
                .collect(),
        }
    }

    #[test]
    fn normalizer_divides_by_global_max() {
        let a = list(&[("x", 2.0), ("y", 1.0)]);
        let b = list(&[("z", 4.0)]);
        let n = fit_normalizer([&a, &b]).unwrap();
        assert_eq!(n.max_sim1, 4.0);
        assert_eq!(n.normalize(2.0), 0.5);
        let single = fit_normalizer([&list(&[("x", 3.0)])]).unwrap();
        assert_eq!(single.normalize(3.0), 1.0);
    }

    #[test]
    fn normalizer_rejects_nonpositive() {
        assert!(matches!(fit_normalizer([&list(&[("x", 0.0)])]), Err(Error::Normalize(_))));
        assert!(fit_normalizer(std::iter::empty()).is_err());
    }

    #[test]
    fn duplicate_text_is_penalized() {
        // Sim1 already on [0,1]; A and A' share text, B is unrelated.
        let pool = list(&[("A", 1.0), ("A2", 0.9), ("B", 0.5)]);
        let mut emb = HashMap::new();
        emb.insert("A".to_string(), hash_embed("the cat sat on the mat", 64));
        emb.insert("A2".to_string(), hash_embed("the cat sat on the mat", 64));
        emb.insert("B".to_string(), hash_embed("quantum chromodynamics lattice", 64));
        let cfg = MmrConfig::new(0.5, 100, 2).unwrap();
        let out = mmr_select(&pool, &cfg, &NormalizationState { max_sim1: 1.0 }, &emb).unwrap();
        assert_eq!(out.doc_ids(), vec!["A", "B"]);
        assert_eq!(out.entries[0].score, 0.5);
    }

    #[test]
    fn missing_embedding_errors() {
        let pool = list(&[("A", 1.0)]);
        let cfg = MmrConfig::new(0.5, 100, 1).unwrap();
        let err = mmr_select(&pool, &cfg, &NormalizationState { max_sim1: 1.0 }, &HashMap::new());
        assert!(matches!(err, Err(Error::MissingEmbedding(_))));
    }

    #[test]
    fn config_bounds() {
        assert!(MmrConfig::new(1.5, 100, 5).is_err());
        assert!(MmrConfig::new(0.5, 4, 5).is_err());
    }

    #[test]
    fn tune_single_and_ties() {
        assert_eq!(tune_lambda(&[0.9], |_| Ok(0.0)).unwrap(), 0.9);
        assert_eq!(tune_lambda(&[0.5, 0.75], |_| Ok(0.4)).unwrap(), 0.75);
        assert_eq!(tune_lambda(&[0.75, 0.5], |_| Ok(0.4)).unwrap(), 0.75);
        assert_eq!(tune_lambda(&LAMBDA_GRID, |l| Ok(if l == 0.5 { 1.0 } else { 0.0 })).unwrap(), 0.5);
        assert!(tune_lambda(&[], |_| Ok(0.0)).is_err());
    }
}
