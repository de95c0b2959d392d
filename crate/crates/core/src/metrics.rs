//! Set-level diversity metrics over judged rankings.
//!
//! Everything here is a pure function of [`CoverageMatrix`] values, which in
//! turn come only from judge verdicts.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{Question, Stance};
use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::judge::Judge;
use crate::ranked::RankedList;

/// Rows are retrieved documents in rank order, columns gold perspectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub question_id: String,
    pub perspective_ids: Vec<String>,
    pub doc_ids: Vec<String>,
    pub cells: Vec<Vec<bool>>,
}

impl CoverageMatrix {
    pub fn new(question_id: impl Into<String>, perspective_ids: Vec<String>, doc_ids: Vec<String>, cells: Vec<Vec<bool>>) -> Result<Self> {
        if doc_ids.len() != cells.len() || cells.iter().any(|r| r.len() != perspective_ids.len()) {
            return Err(Error::Validation("coverage matrix shape mismatch".into()));
        }
        Ok(Self {
            question_id: question_id.into(),
            perspective_ids,
            doc_ids,
            cells,
        })
    }

    /// Anonymous matrix with generated ids; convenient for tests.
    pub fn from_cells(cells: Vec<Vec<bool>>, m: usize) -> Self {
        Self {
            question_id: String::new(),
            perspective_ids: (0..m).map(|i| format!("p{i}")).collect(),
            doc_ids: (0..cells.len()).map(|i| format!("d{i}")).collect(),
            cells,
        }
    }

    pub fn m(&self) -> usize {
        self.perspective_ids.len()
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    fn check(&self) -> Result<()> {
        if self.m() == 0 {
            return Err(Error::Precondition(format!(
                "question {} has no perspectives (m = 0)",
                self.question_id
            )));
        }
        Ok(())
    }

    /// Column indices covered by at least one of the first `k` rows.
    pub fn covered_in_top(&self, k: usize) -> BTreeSet<usize> {
        self.cells
            .iter()
            .take(k)
            .flat_map(|row| row.iter().enumerate().filter(|(_, c)| **c).map(|(j, _)| j))
            .collect()
    }

    pub fn covered_ids(&self, k: usize) -> Vec<String> {
        self.covered_in_top(k)
            .into_iter()
            .map(|j| self.perspective_ids[j].clone())
            .collect()
    }
}

/// Judges every (document, gold perspective) pair of a ranked list.
pub fn coverage_matrix<'c>(
    question: &Question,
    list: &RankedList,
    passage_of: impl Fn(&str) -> Option<&'c Passage> + Sync,
    judge: &dyn Judge,
) -> Result<CoverageMatrix> {
    let cells: Vec<Vec<bool>> = list
        .entries
        .par_iter()
        .map(|e| {
            let doc = passage_of(&e.doc_id)
                .ok_or_else(|| Error::Validation(format!("unknown passage {}", e.doc_id)))?;
            question
                .perspectives
                .iter()
                .map(|p| judge.judge(doc, p).map(|v| v.label))
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()
        .map_err(|e| e.for_question(&question.id))?;
    CoverageMatrix::new(
        question.id.clone(),
        question.perspectives.iter().map(|p| p.id.clone()).collect(),
        list.entries.iter().map(|e| e.doc_id.clone()).collect(),
        cells,
    )
}

/// 1 iff the top `k` rows cover `k` distinct perspectives when `m > k`, or
/// all `m` of them when `m ≤ k`.
pub fn mrecall_at_k(coverage: &CoverageMatrix, k: usize) -> Result<u8> {
    coverage.check()?;
    let m = coverage.m();
    let distinct = coverage.covered_in_top(k).len();
    let hit = if m > k { distinct >= k } else { distinct == m };
    Ok(hit as u8)
}

/// Fraction of the top `k` slots holding a document with any gold
/// perspective. Missing slots (short lists) count as misses.
pub fn precision_at_k(coverage: &CoverageMatrix, k: usize) -> Result<f64> {
    coverage.check()?;
    if k == 0 {
        return Err(Error::Precondition("k must be >= 1".into()));
    }
    let hits = coverage.cells.iter().take(k).filter(|r| r.iter().any(|c| *c)).count();
    Ok(hits as f64 / k as f64)
}

/// All `m` perspectives covered anywhere in the matrix.
pub fn full_coverage(coverage: &CoverageMatrix) -> Result<bool> {
    coverage.check()?;
    Ok(coverage.covered_in_top(usize::MAX).len() == coverage.m())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaningReport {
    /// Percent of pooled documents containing the supporting perspective.
    pub p_sup: f64,
    /// Percent containing the opposing perspective.
    pub n_opp: f64,
    /// `(p − n) / p`; `None` when `p = 0`.
    pub delta: Option<f64>,
    pub questions: usize,
    pub documents: usize,
}

/// Leaning over the top `k` documents of every two-perspective question with
/// labeled stances, pooled across questions. Other questions are skipped.
pub fn leaning_delta<'a>(items: impl IntoIterator<Item = (&'a Question, &'a CoverageMatrix)>, k: usize) -> Result<LeaningReport> {
    let (mut questions, mut docs, mut sup, mut opp) = (0usize, 0usize, 0usize, 0usize);
    for (q, cov) in items {
        if !q.has_stance_pair() {
            continue;
        }
        let col = |stance: Stance| {
            let id = &q.perspective_with(stance).expect("stance pair checked").id;
            cov.perspective_ids.iter().position(|p| p == id)
        };
        let (Some(s), Some(o)) = (col(Stance::Supporting), col(Stance::Opposing)) else {
            return Err(Error::Validation(format!("coverage for {} lacks stance columns", q.id)));
        };
        questions += 1;
        for row in cov.cells.iter().take(k) {
            docs += 1;
            sup += row[s] as usize;
            opp += row[o] as usize;
        }
    }
    if questions == 0 {
        return Err(Error::Precondition(
            "no stance-labeled two-perspective questions; run label_stances first".into(),
        ));
    }
    let pct = |x: usize| if docs == 0 { 0.0 } else { 100.0 * x as f64 / docs as f64 };
    let (p_sup, n_opp) = (pct(sup), pct(opp));
    Ok(LeaningReport {
        p_sup,
        n_opp,
        delta: (p_sup > 0.0).then(|| (p_sup - n_opp) / p_sup),
        questions,
        documents: docs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SycophancyReport {
    pub supporting_query: LeaningReport,
    pub default_query: LeaningReport,
    pub opposing_query: LeaningReport,
    /// Whether Δ_sup ≥ Δ_default ≥ Δ_opp held here; reported, never enforced.
    pub ordered: Option<bool>,
}

impl SycophancyReport {
    pub fn deltas(&self) -> (Option<f64>, Option<f64>, Option<f64>) {
        (self.supporting_query.delta, self.default_query.delta, self.opposing_query.delta)
    }
}

/// Compares leaning across three runs keyed by question id.
pub fn sycophancy_compare(
    questions: &[Question],
    default_run: &BTreeMap<String, CoverageMatrix>,
    supporting_run: &BTreeMap<String, CoverageMatrix>,
    opposing_run: &BTreeMap<String, CoverageMatrix>,
    k: usize,
) -> Result<SycophancyReport> {
    let keys = |m: &BTreeMap<String, CoverageMatrix>| m.keys().cloned().collect::<BTreeSet<_>>();
    let d = keys(default_run);
    if d != keys(supporting_run) || d != keys(opposing_run) {
        return Err(Error::Validation("sycophancy runs cover different question sets".into()));
    }
    let pick = |run: &BTreeMap<String, CoverageMatrix>| -> Result<LeaningReport> {
        let items: Vec<(&Question, &CoverageMatrix)> = questions
            .iter()
            .filter_map(|q| run.get(&q.id).map(|c| (q, c)))
            .collect();
        leaning_delta(items, k)
    };
    let (s, df, o) = (pick(supporting_run)?, pick(default_run)?, pick(opposing_run)?);
    let ordered = match (s.delta, df.delta, o.delta) {
        (Some(a), Some(b), Some(c)) => Some(a >= b && b >= c),
        _ => None,
    };
    Ok(SycophancyReport {
        supporting_query: s,
        default_query: df,
        opposing_query: o,
        ordered,
    })
}

/// Row-wise union of several matrices for the same question, deduplicated by
/// doc id (first occurrence wins).
pub fn union_coverage(matrices: &[CoverageMatrix]) -> Result<CoverageMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Precondition("union needs at least one run".into()))?;
    let mut seen = HashSet::new();
    let mut doc_ids = Vec::new();
    let mut cells = Vec::new();
    for m in matrices {
        if m.perspective_ids != first.perspective_ids {
            return Err(Error::Validation("union over mismatched perspective columns".into()));
        }
        for (d, row) in m.doc_ids.iter().zip(&m.cells) {
            if seen.insert(d.clone()) {
                doc_ids.push(d.clone());
                cells.push(row.clone());
            }
        }
    }
    CoverageMatrix::new(first.question_id.clone(), first.perspective_ids.clone(), doc_ids, cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionReport {
    pub per_question: BTreeMap<String, bool>,
    /// Fraction of questions whose union covers all perspectives.
    pub mrecall: f64,
}

/// `per_question[q]` holds one matrix per run (typically top-100 each).
pub fn union_upperbound(per_question: &BTreeMap<String, Vec<CoverageMatrix>>) -> Result<UnionReport> {
    let mut out = BTreeMap::new();
    for (qid, runs) in per_question {
        let u = union_coverage(runs).map_err(|e| e.for_question(qid))?;
        out.insert(qid.clone(), full_coverage(&u)?);
    }
    let mrecall = if out.is_empty() {
        0.0
    } else {
        out.values().filter(|c| **c).count() as f64 / out.len() as f64
    };
    Ok(UnionReport {
        per_question: out,
        mrecall,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCover {
    pub covered: bool,
    pub size: Option<usize>,
}

/// Shortest prefix covering every perspective, if any.
pub fn rank_to_cover(coverage: &CoverageMatrix) -> Result<RankCover> {
    coverage.check()?;
    let mut seen = vec![false; coverage.m()];
    let mut remaining = coverage.m();
    for (i, row) in coverage.cells.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            if *c && !seen[j] {
                seen[j] = true;
                remaining -= 1;
            }
        }
        if remaining == 0 {
            return Ok(RankCover {
                covered: true,
                size: Some(i + 1),
            });
        }
    }
    Ok(RankCover {
        covered: false,
        size: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCoverSummary {
    /// Mean prefix size over covered questions.
    pub mean_size: Option<f64>,
    /// Percent of questions covered within the list.
    pub percent_covered: f64,
    pub questions: usize,
}

pub fn summarize_rank_cover(items: &[RankCover]) -> RankCoverSummary {
    let sizes: Vec<usize> = items.iter().filter_map(|r| r.size).collect();
    RankCoverSummary {
        mean_size: (!sizes.is_empty()).then(|| sizes.iter().sum::<usize>() as f64 / sizes.len() as f64),
        percent_covered: if items.is_empty() {
            0.0
        } else {
            100.0 * sizes.len() as f64 / items.len() as f64
        },
        questions: items.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub mrecall: u8,
    pub precision: f64,
    pub covered: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetrics {
    pub question_id: String,
    pub dataset: String,
    pub at_k: BTreeMap<usize, AtK>,
}

pub fn question_metrics(dataset: &str, coverage: &CoverageMatrix, ks: &[usize]) -> Result<QuestionMetrics> {
    let mut at_k = BTreeMap::new();
    for &k in ks {
        at_k.insert(
            k,
            AtK {
                mrecall: mrecall_at_k(coverage, k)?,
                precision: precision_at_k(coverage, k)?,
                covered: coverage.covered_ids(k),
            },
        );
    }
    Ok(QuestionMetrics {
        question_id: coverage.question_id.clone(),
        dataset: dataset.to_string(),
        at_k,
    })
}

/// Percentages (×100) per k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub questions: usize,
    pub mrecall: BTreeMap<usize, f64>,
    pub precision: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub retriever: String,
    pub corpus: String,
    pub ks: Vec<usize>,
    pub per_question: Vec<QuestionMetrics>,
    pub per_dataset: BTreeMap<String, Aggregate>,
    /// Unweighted mean of the dataset means.
    pub macro_average: Aggregate,
}

pub const CSV_HEADER: &str = "dataset,retriever,corpus,metric,k,value";

impl EvalReport {
    pub fn new(retriever: &str, corpus: &str, ks: &[usize], per_question: Vec<QuestionMetrics>) -> Self {
        let mut groups: BTreeMap<String, Vec<&QuestionMetrics>> = BTreeMap::new();
        for q in &per_question {
            groups.entry(q.dataset.clone()).or_default().push(q);
        }
        let per_dataset: BTreeMap<String, Aggregate> = groups
            .into_iter()
            .map(|(name, qs)| {
                let n = qs.len() as f64;
                let mut mrecall = BTreeMap::new();
                let mut precision = BTreeMap::new();
                for &k in ks {
                    let mr: f64 = qs.iter().map(|q| q.at_k[&k].mrecall as f64).sum();
                    let pr: f64 = qs.iter().map(|q| q.at_k[&k].precision).sum();
                    mrecall.insert(k, 100.0 * mr / n);
                    precision.insert(k, 100.0 * pr / n);
                }
                (
                    name,
                    Aggregate {
                        questions: qs.len(),
                        mrecall,
                        precision,
                    },
                )
            })
            .collect();
        let d = per_dataset.len().max(1) as f64;
        let mean_of = |f: &dyn Fn(&Aggregate) -> &BTreeMap<usize, f64>| -> BTreeMap<usize, f64> {
            ks.iter()
                .map(|&k| (k, per_dataset.values().map(|a| f(a)[&k]).sum::<f64>() / d))
                .collect()
        };
        let macro_average = Aggregate {
            questions: per_question.len(),
            mrecall: mean_of(&|a| &a.mrecall),
            precision: mean_of(&|a| &a.precision),
        };
        Self {
            retriever: retriever.to_string(),
            corpus: corpus.to_string(),
            ks: ks.to_vec(),
            per_question,
            per_dataset,
            macro_average,
        }
    }

    /// One row per (dataset, metric, k), no header.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for (name, agg) in &self.per_dataset {
            for (metric, values) in [("mrecall", &agg.mrecall), ("precision", &agg.precision)] {
                for &k in &self.ks {
                    rows.push(format!(
                        "{},{},{},{},{},{:.6}",
                        csv_field(name),
                        csv_field(&self.retriever),
                        csv_field(&self.corpus),
                        metric,
                        k,
                        values[&k]
                    ));
                }
            }
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in self.csv_rows() {
            s.push_str(&r);
            s.push('\n');
        }
        s
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
