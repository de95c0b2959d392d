//! Config-driven runs: index → retrieve → [rerank | expand] → judge →
//! metrics → report, plus the leaning, union and rank-to-cover analyses.
//!
//! Intermediate outputs are content-addressed under `<output_dir>/stages/`;
//! a rerun whose inputs and config prefix are unchanged reuses them. Report
//! files carry no timestamps, so identical runs produce identical bytes.
//! `manifest.json` records stage reuse, timings and warning counts.

pub mod config;
mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::*;
pub use store::{RunManifest, StageRecord};
use store::{key, now_secs, StageStore};

use crate::benchmark::{load_benchmark, Benchmark, Question, Split, Stance};
use crate::corpus::{load_corpus, load_page_dump, Corpus, CorpusScope};
use crate::dense::{DenseIndex, EmbeddingProvider, HashEmbedder};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::expansion::{expanded_retrieve, ExpansionRun};
use crate::judge::{CachedJudge, Judge, JudgePrompt, LlmJudge, RandomJudge, RuleJudge, VerdictCache};
use crate::metrics::{
    coverage_matrix, csv_field, full_coverage, mrecall_at_k, question_metrics, rank_to_cover,
    summarize_rank_cover, sycophancy_compare, union_upperbound, CoverageMatrix, EvalReport,
    RankCover, RankCoverSummary, SycophancyReport, CSV_HEADER,
};
use crate::mmr::{fit_normalizer, mmr_rerank, tune_lambda, MmrConfig, LAMBDA_GRID};
use crate::providers::{ChatProvider, FixtureChat, HttpChat, HttpEmbedder};
use crate::ranked::{read_runs, RankedList};
use crate::retrieval::{
    Bm25Retriever, CorpusSet, DenseRetriever, PerQuestionRetriever, PrecomputedRetriever, Retriever,
};
use crate::sparse::{Bm25Params, InvertedIndex};

/// MRecall cutoff used to pick λ on the dev split.
pub const TUNING_K: usize = 5;

/// Which text is sent to the retriever for a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Question,
    Supporting,
    Opposing,
}

impl QueryKind {
    fn text<'q>(&self, q: &'q Question) -> Result<&'q str> {
        let stance = match self {
            QueryKind::Question => return Ok(&q.text),
            QueryKind::Supporting => Stance::Supporting,
            QueryKind::Opposing => Stance::Opposing,
        };
        q.perspective_with(stance)
            .map(|p| p.text.as_str())
            .ok_or_else(|| Error::Validation(format!("question {} has no {stance:?} perspective", q.id)))
    }

    fn as_str(&self) -> &'static str {
        match self {
            QueryKind::Question => "question",
            QueryKind::Supporting => "supporting",
            QueryKind::Opposing => "opposing",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RetrievalArtifact {
    lists: Vec<RankedList>,
    #[serde(default)]
    expansions: Vec<ExpansionRun>,
    #[serde(default)]
    lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub reports: Vec<EvalReport>,
    /// λ chosen per retriever when MMR was active.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub lambdas: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.reports {
            for row in r.csv_rows() {
                s.push_str(&row);
                s.push('\n');
            }
        }
        s
    }

    pub fn get(&self, retriever: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.retriever == retriever)
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: RunReport,
    pub manifest: RunManifest,
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SycophancyRow {
    pub retriever: String,
    pub k: usize,
    pub report: SycophancyReport,
}

#[derive(Debug, Clone)]
pub struct SycophancyOutcome {
    pub rows: Vec<SycophancyRow>,
    pub manifest: RunManifest,
    /// Verdicts computed by the underlying judge (cache misses).
    pub judge_calls: u64,
    pub judge_cache_hits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperboundReport {
    pub depth: usize,
    pub retrievers: Vec<String>,
    /// dataset → retriever → percent of questions fully covered in its top list.
    pub individual: BTreeMap<String, BTreeMap<String, f64>>,
    /// dataset → percent of questions fully covered by the union.
    pub union: BTreeMap<String, f64>,
    pub per_question: BTreeMap<String, UnionQuestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionQuestion {
    pub individual: BTreeMap<String, bool>,
    pub union: bool,
}

#[derive(Debug, Clone)]
pub struct UpperboundOutcome {
    pub report: UpperboundReport,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCoverReport {
    pub depth: usize,
    /// retriever → dataset → summary.
    pub summaries: BTreeMap<String, BTreeMap<String, RankCoverSummary>>,
    /// retriever → question → result.
    pub per_question: BTreeMap<String, BTreeMap<String, RankCover>>,
}

#[derive(Debug, Clone)]
pub struct RankCoverOutcome {
    pub report: RankCoverReport,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannedStage {
    pub stage: String,
    pub name: String,
    pub key: String,
    pub cached: bool,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn tree_digest(root: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut parts = Vec::with_capacity(files.len() * 2);
    for f in &files {
        parts.push(f.strip_prefix(root).unwrap_or(f).to_string_lossy().into_owned());
        parts.push(file_digest(f)?);
    }
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    Ok(key(&refs))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).map(|v| v.to_string()).unwrap_or_default()
}

pub fn config_digest(config: &RunConfig) -> String {
    sha256_hex(to_json(config).as_bytes())
}

/// Fails before any stage runs if a referenced input is missing.
pub fn preflight(config: &RunConfig) -> Result<()> {
    config.validate()?;
    for p in config.input_paths() {
        if !p.exists() {
            return Err(Error::Config(format!("missing input {}", p.display())));
        }
    }
    Ok(())
}

fn build_embedder(spec: &EmbedderSpec) -> Result<Arc<dyn EmbeddingProvider>> {
    Ok(match spec {
        EmbedderSpec::Hash { dim } => Arc::new(HashEmbedder::new(*dim)?),
        EmbedderSpec::Http { config, dim } => Arc::new(HttpEmbedder::new(config.clone(), *dim)?),
    })
}

fn build_chat(spec: &ChatSpec) -> Result<Arc<dyn ChatProvider>> {
    Ok(match spec {
        ChatSpec::Http { config } => Arc::new(HttpChat::new(config.clone())?),
        ChatSpec::Fixture { path, model } => Arc::new(FixtureChat::load(path, model.clone())?),
    })
}

fn chat_fingerprint(spec: &ChatSpec) -> Result<String> {
    Ok(match spec {
        ChatSpec::Fixture { path, model } => format!("fixture:{model}:{}", file_digest(path)?),
        ChatSpec::Http { config } => format!("http:{}:{}", config.base_url, config.model_name),
    })
}

struct Session {
    config: RunConfig,
    command: String,
    benchmark: Benchmark,
    corpora: CorpusSet,
    corpus_label: String,
    inputs_key: String,
    judge_key: String,
    judge: Arc<CachedJudge>,
    store: StageStore,
    workers: rayon::ThreadPool,
    warnings: BTreeMap<String, u64>,
    started_at: u64,
}

impl Session {
    fn open(config: &RunConfig, command: &str) -> Result<Self> {
        preflight(config)?;
        let benchmark = load_benchmark(&config.benchmark)?;
        let (corpora, corpus_label, corpus_digest) = match (&config.corpus.shared, &config.corpus.per_question_root) {
            (Some(path), _) => {
                let c = load_corpus(path, CorpusScope::Shared)?;
                let label = c.id.clone();
                (CorpusSet::Shared(c), label, file_digest(path)?)
            }
            (None, Some(root)) => {
                let map = load_page_dump(root, config.corpus.window)?;
                (CorpusSet::PerQuestion(map), "per_question".to_string(), tree_digest(root)?)
            }
            (None, None) => unreachable!("validated"),
        };
        let inputs_key = key(&[
            &file_digest(&config.benchmark)?,
            &corpus_digest,
            &config.corpus.window.to_string(),
        ]);
        std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;

        let inner: Arc<dyn Judge> = match &config.judge {
            JudgeSpec::Rule => Arc::new(RuleJudge),
            JudgeSpec::Random { rate } => Arc::new(RandomJudge::new(*rate, config.seed)?),
            JudgeSpec::Llm { chat, shots } => {
                let prompt = if *shots == 1 { JudgePrompt::one_shot() } else { JudgePrompt::zero_shot() };
                Arc::new(LlmJudge::new(build_chat(chat)?, prompt))
            }
        };
        let judge_key = match &config.judge {
            JudgeSpec::Llm { chat, shots } => key(&[&inner.cache_namespace(), &chat_fingerprint(chat)?, &shots.to_string()]),
            _ => key(&[&inner.cache_namespace()]),
        };
        let cache = Arc::new(VerdictCache::open(&config.output_dir.join("verdicts.jsonl"))?);
        let judge = Arc::new(CachedJudge::new(inner, cache));
        let workers = rayon::ThreadPoolBuilder::new()
            .num_threads(config.max_workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            config: config.clone(),
            command: command.to_string(),
            store: StageStore::new(&config.output_dir),
            benchmark,
            corpora,
            corpus_label,
            inputs_key,
            judge_key,
            judge,
            workers,
            warnings: BTreeMap::new(),
            started_at: now_secs(),
        })
    }

    fn questions(&self, split: Option<Split>) -> Vec<Question> {
        self.benchmark
            .questions
            .iter()
            .filter(|q| split.is_none() || q.split == split)
            .cloned()
            .collect()
    }

    fn eval_questions(&self) -> Vec<Question> {
        self.questions(self.config.split)
    }

    fn index_key(&self, r: &NamedRetriever) -> Result<String> {
        let extra = match &r.spec {
            RetrieverSpec::Precomputed { path } => file_digest(path)?,
            _ => String::new(),
        };
        Ok(key(&["index", &self.inputs_key, &to_json(&r.spec), &extra]))
    }

    fn retriever(&mut self, r: &NamedRetriever) -> Result<Box<dyn Retriever>> {
        let ikey = self.index_key(r)?;
        let name = r.name.clone();
        match &r.spec {
            RetrieverSpec::Bm25 { k1, b } => {
                let params = Bm25Params { k1: *k1, b: *b };
                match &self.corpora {
                    CorpusSet::Shared(c) => {
                        let idx: InvertedIndex =
                            self.store.cached("index", &name, &ikey, || Ok(InvertedIndex::build(c, params)))?;
                        Ok(Box::new(Bm25Retriever::new(name, idx)))
                    }
                    CorpusSet::PerQuestion(map) => {
                        let idx: BTreeMap<String, InvertedIndex> = self.store.cached("index", &name, &ikey, || {
                            Ok(map.iter().map(|(q, c)| (q.clone(), InvertedIndex::build(c, params))).collect())
                        })?;
                        let by_q = idx
                            .into_iter()
                            .map(|(q, i)| (q, Box::new(Bm25Retriever::new(name.clone(), i)) as Box<dyn Retriever>))
                            .collect();
                        Ok(Box::new(PerQuestionRetriever::new(name, by_q)))
                    }
                }
            }
            RetrieverSpec::Dense { provider, batch_size } => {
                let embedder = build_embedder(provider)?;
                let batch = *batch_size;
                match &self.corpora {
                    CorpusSet::Shared(c) => {
                        let e = Arc::clone(&embedder);
                        let idx: DenseIndex =
                            self.store.cached("index", &name, &ikey, || DenseIndex::build(c, e.as_ref(), batch))?;
                        Ok(Box::new(DenseRetriever::new(name, idx, embedder)))
                    }
                    CorpusSet::PerQuestion(map) => {
                        let e = Arc::clone(&embedder);
                        let idx: BTreeMap<String, DenseIndex> = self.store.cached("index", &name, &ikey, || {
                            map.iter()
                                .map(|(q, c)| Ok((q.clone(), DenseIndex::build(c, e.as_ref(), batch)?)))
                                .collect()
                        })?;
                        let by_q = idx
                            .into_iter()
                            .map(|(q, i)| {
                                let r: Box<dyn Retriever> = Box::new(DenseRetriever::new(name.clone(), i, Arc::clone(&embedder)));
                                (q, r)
                            })
                            .collect();
                        Ok(Box::new(PerQuestionRetriever::new(name, by_q)))
                    }
                }
            }
            RetrieverSpec::Precomputed { path } => Ok(Box::new(PrecomputedRetriever::new(name, read_runs(path)?)?)),
        }
    }

    fn base_lists(&self, retriever: &dyn Retriever, questions: &[Question], query: QueryKind, depth: usize) -> Result<Vec<RankedList>> {
        self.workers.install(|| {
            questions
                .par_iter()
                .map(|q| {
                    let text = query.text(q)?;
                    retriever.retrieve(&q.id, text, depth).map_err(|e| e.for_question(&q.id))
                })
                .collect()
        })
    }

    fn coverage(&self, questions: &[Question], lists: &[RankedList]) -> Result<Vec<CoverageMatrix>> {
        let corpora = &self.corpora;
        let judge = self.judge.as_ref();
        self.workers.install(|| {
            questions
                .par_iter()
                .zip(lists)
                .map(|(q, l)| coverage_matrix(q, l, |d| corpora.passage(&q.id, d), judge))
                .collect()
        })
    }

    fn retrieval_key(&self, r: &NamedRetriever, query: QueryKind, depth: usize, diversity: &DiversitySpec) -> Result<String> {
        let mut parts = vec![
            "retrieve".to_string(),
            self.index_key(r)?,
            query.as_str().into(),
            depth.to_string(),
            to_json(&self.config.split),
            to_json(diversity),
        ];
        match diversity {
            DiversitySpec::Expansion { chat, .. } => parts.push(chat_fingerprint(chat)?),
            DiversitySpec::Mmr { lambda: LambdaSpec::Auto(_), .. } => parts.push(self.judge_key.clone()),
            _ => {}
        }
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        Ok(key(&refs))
    }

    fn coverage_key(&self, retrieval_key: &str) -> String {
        key(&["coverage", retrieval_key, &self.judge_key])
    }

    /// Runs the configured diversity mode over the evaluation questions.
    fn retrieve_stage(
        &mut self,
        r: &NamedRetriever,
        retriever: &dyn Retriever,
        questions: &[Question],
        query: QueryKind,
        depth: usize,
        diversity: &DiversitySpec,
    ) -> Result<(String, RetrievalArtifact)> {
        let rkey = self.retrieval_key(r, query, depth, diversity)?;
        let stage_name = format!("{}-{}", r.name, query.as_str());
        let art: RetrievalArtifact = match diversity {
            DiversitySpec::None => {
                let lists = self.base_lists(retriever, questions, query, depth)?;
                self.store.cached("retrieve", &stage_name, &rkey, || {
                    Ok(RetrievalArtifact { lists, expansions: Vec::new(), lambda: None })
                })?
            }
            DiversitySpec::Mmr { lambda, pool, sim2 } => {
                if self.store.exists("retrieve", &stage_name, &rkey) {
                    self.store.cached("retrieve", &stage_name, &rkey, || unreachable!("stage exists"))?
                } else {
                    let art = self.mmr_stage(retriever, questions, query, depth, *lambda, *pool, sim2)?;
                    self.store.cached("retrieve", &stage_name, &rkey, || Ok(art))?
                }
            }
            DiversitySpec::Expansion { chat, concat_question } => {
                if self.store.exists("retrieve", &stage_name, &rkey) {
                    self.store.cached("retrieve", &stage_name, &rkey, || unreachable!("stage exists"))?
                } else {
                    let chat = build_chat(chat)?;
                    let concat = *concat_question;
                    let runs: Vec<ExpansionRun> = self.workers.install(|| {
                        questions
                            .par_iter()
                            .map(|q| expanded_retrieve(q, retriever, chat.as_ref(), depth, concat))
                            .collect::<Result<_>>()
                    })?;
                    let retries: u64 = runs.iter().map(|r| r.retries as u64).sum();
                    *self.warnings.entry("expansion_retries".into()).or_default() += retries;
                    let lists = runs.iter().map(|r| r.merged.clone()).collect();
                    self.store.cached("retrieve", &stage_name, &rkey, || {
                        Ok(RetrievalArtifact { lists, expansions: runs, lambda: None })
                    })?
                }
            }
        };
        Ok((rkey, art))
    }

    #[allow(clippy::too_many_arguments)]
    fn mmr_stage(
        &mut self,
        retriever: &dyn Retriever,
        questions: &[Question],
        query: QueryKind,
        depth: usize,
        lambda: LambdaSpec,
        pool: usize,
        sim2: &EmbedderSpec,
    ) -> Result<RetrievalArtifact> {
        let embedder = build_embedder(sim2)?;
        let dev: Vec<Question> = match lambda {
            LambdaSpec::Auto(_) => {
                let dev = self.questions(Some(Split::Dev));
                if dev.is_empty() {
                    return Err(Error::Config("lambda = \"auto\" needs dev-split questions".into()));
                }
                dev
            }
            LambdaSpec::Fixed(_) => Vec::new(),
        };
        let pools = self.base_lists(retriever, questions, query, pool)?;
        let dev_pools = self.base_lists(retriever, &dev, query, pool)?;
        // run-wide scale over every pool this run touches
        let norm = fit_normalizer(pools.iter().chain(&dev_pools))?;
        let corpora = &self.corpora;
        let rerank = |qs: &[Question], ps: &[RankedList], l: f64, k: usize| -> Result<Vec<RankedList>> {
            let cfg = MmrConfig::new(l, pool, k)?;
            self.workers.install(|| {
                qs.par_iter()
                    .zip(ps)
                    .map(|(q, p)| {
                        mmr_rerank(p, &cfg, &norm, embedder.as_ref(), |d| corpora.passage(&q.id, d).map(|x| x.text.as_str()))
                            .map_err(|e| e.for_question(&q.id))
                    })
                    .collect()
            })
        };
        let chosen = match lambda {
            LambdaSpec::Fixed(l) => l,
            LambdaSpec::Auto(_) => tune_lambda(&LAMBDA_GRID, |l| {
                let lists = rerank(&dev, &dev_pools, l, TUNING_K.min(pool))?;
                let cov = self.coverage(&dev, &lists)?;
                let hits: u64 = cov
                    .iter()
                    .map(|c| mrecall_at_k(c, TUNING_K).map(u64::from))
                    .sum::<Result<u64>>()?;
                Ok(hits as f64 / cov.len() as f64)
            })?,
        };
        let lists = rerank(questions, &pools, chosen, depth.min(pool))?;
        Ok(RetrievalArtifact {
            lists,
            expansions: Vec::new(),
            lambda: Some(chosen),
        })
    }

    fn coverage_stage(&mut self, name: &str, rkey: &str, questions: &[Question], lists: &[RankedList]) -> Result<Vec<CoverageMatrix>> {
        let ckey = self.coverage_key(rkey);
        if self.store.exists("coverage", name, &ckey) {
            return self.store.cached("coverage", name, &ckey, || unreachable!("stage exists"));
        }
        let cov = self.coverage(questions, lists)?;
        self.store.cached("coverage", name, &ckey, || Ok(cov))
    }

    fn manifest(&mut self, status: &str) -> Result<RunManifest> {
        let malformed = self.judge.malformed();
        if malformed > 0 {
            self.warnings.insert("judge_malformed".into(), malformed);
        }
        let mut manifest = RunManifest {
            command: self.command.clone(),
            config_digest: config_digest(&self.config),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: self.started_at,
            finished_at: now_secs(),
            status: status.into(),
            stages: self.store.records.clone(),
            artifacts: Vec::new(),
            warnings: self.warnings.clone(),
        };
        let mut artifacts: Vec<PathBuf> = self.store.records.iter().map(|r| r.path.clone()).collect();
        artifacts.extend(self.store.artifacts.iter().cloned());
        artifacts.push(PathBuf::from("verdicts.jsonl"));
        artifacts.push(PathBuf::from(format!("manifest-{}.json", self.command)));
        artifacts.sort();
        artifacts.dedup();
        manifest.artifacts = artifacts;
        let path = self.store.root().join(format!("manifest-{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Runs `body`; on failure still writes a manifest recording progress.
    fn run<T>(mut self, body: impl FnOnce(&mut Session) -> Result<T>) -> Result<(T, RunManifest)> {
        match body(&mut self) {
            Ok(v) => {
                let m = self.manifest("complete")?;
                Ok((v, m))
            }
            Err(e) => {
                let _ = self.manifest(&format!("failed: {e}"));
                Err(e)
            }
        }
    }
}

fn diversity_suffix(d: &DiversitySpec) -> &'static str {
    match d {
        DiversitySpec::None => "",
        DiversitySpec::Mmr { .. } => "+mmr",
        DiversitySpec::Expansion { .. } => "+expansion",
    }
}

/// Full evaluation for every configured retriever.
pub fn run_eval(config: &RunConfig) -> Result<EvalOutcome> {
    let session = Session::open(config, "eval")?;
    let ((report, report_json, report_csv), manifest) = session.run(|s| {
        let questions = s.eval_questions();
        let diversity = s.config.diversity.clone();
        let depth = s.config.max_k();
        let ks = s.config.ks.clone();
        let mut reports = Vec::new();
        let mut lambdas = BTreeMap::new();
        for r in s.config.retrievers.clone() {
            let retriever = s.retriever(&r)?;
            let (rkey, art) = s.retrieve_stage(&r, retriever.as_ref(), &questions, QueryKind::Question, depth, &diversity)?;
            let label = format!("{}{}", r.name, diversity_suffix(&diversity));
            if let Some(l) = art.lambda {
                lambdas.insert(label.clone(), l);
            }
            let cov = s.coverage_stage(&label, &rkey, &questions, &art.lists)?;
            let per_question = questions
                .iter()
                .zip(&cov)
                .map(|(q, c)| question_metrics(q.source.as_str(), c, &ks))
                .collect::<Result<Vec<_>>>()?;
            reports.push(EvalReport::new(&label, &s.corpus_label, &ks, per_question));
        }
        let report = RunReport { reports, lambdas };
        let json = s.store.write_artifact("report.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
        let csv = s.store.write_artifact("report.csv", report.to_csv().as_bytes())?;
        Ok((report, json, csv))
    })?;
    Ok(EvalOutcome {
        report,
        manifest,
        report_json,
        report_csv,
    })
}

/// Default, supporting-perspective and opposing-perspective queries against
/// every retriever, judged through one shared cache. Diversity settings are
/// not applied here.
pub fn run_sycophancy(config: &RunConfig) -> Result<SycophancyOutcome> {
    let session = Session::open(config, "sycophancy")?;
    let ((rows, calls, hits), manifest) = session.run(|s| {
        let questions: Vec<Question> = s.eval_questions().into_iter().filter(Question::has_stance_pair).collect();
        if questions.is_empty() {
            return Err(Error::Precondition(
                "no question has labeled supporting/opposing stances; run `divret label-stances` first".into(),
            ));
        }
        let depth = s.config.max_k();
        let ks = s.config.ks.clone();
        let mut rows = Vec::new();
        for r in s.config.retrievers.clone() {
            let retriever = s.retriever(&r)?;
            let mut runs = BTreeMap::new();
            for kind in [QueryKind::Question, QueryKind::Supporting, QueryKind::Opposing] {
                let (rkey, art) = s.retrieve_stage(&r, retriever.as_ref(), &questions, kind, depth, &DiversitySpec::None)?;
                let cov = s.coverage_stage(&format!("{}-{}", r.name, kind.as_str()), &rkey, &questions, &art.lists)?;
                let by_q: BTreeMap<String, CoverageMatrix> = cov.into_iter().map(|c| (c.question_id.clone(), c)).collect();
                runs.insert(kind.as_str(), by_q);
            }
            for &k in &ks {
                let report = sycophancy_compare(&questions, &runs["question"], &runs["supporting"], &runs["opposing"], k)?;
                rows.push(SycophancyRow {
                    retriever: r.name.clone(),
                    k,
                    report,
                });
            }
        }
        s.store.write_artifact("sycophancy.json", serde_json::to_string_pretty(&rows)?.as_bytes())?;
        let mut csv = String::from("retriever,k,delta_supporting_query,delta_default_query,delta_opposing_query,ordered\n");
        let fmt = |d: Option<f64>| d.map_or(String::new(), |v| format!("{v:.6}"));
        for row in &rows {
            let (a, b, c) = row.report.deltas();
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&row.retriever),
                row.k,
                fmt(a),
                fmt(b),
                fmt(c),
                row.report.ordered.map_or(String::new(), |o| o.to_string())
            ));
        }
        s.store.write_artifact("sycophancy.csv", csv.as_bytes())?;
        Ok((rows, s.judge.misses(), s.judge.hits()))
    })?;
    Ok(SycophancyOutcome {
        rows,
        manifest,
        judge_calls: calls,
        judge_cache_hits: hits,
    })
}

/// Union of every retriever's top `analysis_depth` lists per question.
pub fn run_upperbound(config: &RunConfig) -> Result<UpperboundOutcome> {
    if config.retrievers.len() < 2 {
        return Err(Error::Precondition("upper bound needs at least two retrievers".into()));
    }
    let session = Session::open(config, "upperbound")?;
    let (report, manifest) = session.run(|s| {
        let questions = s.eval_questions();
        let depth = s.config.analysis_depth;
        let mut per_run: BTreeMap<String, Vec<CoverageMatrix>> = BTreeMap::new();
        let names: Vec<String> = s.config.retrievers.iter().map(|r| r.name.clone()).collect();
        for r in s.config.retrievers.clone() {
            let retriever = s.retriever(&r)?;
            let (rkey, art) = s.retrieve_stage(&r, retriever.as_ref(), &questions, QueryKind::Question, depth, &DiversitySpec::None)?;
            let cov = s.coverage_stage(&format!("{}-depth{depth}", r.name), &rkey, &questions, &art.lists)?;
            per_run.insert(r.name.clone(), cov);
        }
        let mut union_input: BTreeMap<String, Vec<CoverageMatrix>> = BTreeMap::new();
        let mut per_question = BTreeMap::new();
        for (i, q) in questions.iter().enumerate() {
            let mats: Vec<CoverageMatrix> = names.iter().map(|n| per_run[n][i].clone()).collect();
            let individual = names
                .iter()
                .zip(&mats)
                .map(|(n, m)| Ok((n.clone(), full_coverage(m)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            per_question.insert(q.id.clone(), UnionQuestion { individual, union: false });
            union_input.insert(q.id.clone(), mats);
        }
        let union = union_upperbound(&union_input)?;
        for (qid, covered) in &union.per_question {
            if let Some(e) = per_question.get_mut(qid) {
                e.union = *covered;
            }
        }
        let mut by_dataset: BTreeMap<String, Vec<&Question>> = BTreeMap::new();
        for q in &questions {
            by_dataset.entry(q.source.as_str().to_string()).or_default().push(q);
        }
        let pct = |qs: &[&Question], f: &dyn Fn(&UnionQuestion) -> bool| {
            100.0 * qs.iter().filter(|q| f(&per_question[&q.id])).count() as f64 / qs.len() as f64
        };
        let mut individual = BTreeMap::new();
        let mut union_pct = BTreeMap::new();
        for (ds, qs) in &by_dataset {
            union_pct.insert(ds.clone(), pct(qs, &|u| u.union));
            let row = names.iter().map(|n| (n.clone(), pct(qs, &|u| u.individual[n]))).collect();
            individual.insert(ds.clone(), row);
        }
        let report = UpperboundReport {
            depth,
            retrievers: names.clone(),
            individual,
            union: union_pct,
            per_question,
        };
        s.store.write_artifact("upperbound.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
        let mut csv = String::from("dataset,retriever,mrecall\n");
        for (ds, row) in &report.individual {
            for n in &names {
                csv.push_str(&format!("{},{},{:.6}\n", csv_field(ds), csv_field(n), row[n]));
            }
            csv.push_str(&format!("{},union,{:.6}\n", csv_field(ds), report.union[ds]));
        }
        s.store.write_artifact("upperbound.csv", csv.as_bytes())?;
        Ok(report)
    })?;
    Ok(UpperboundOutcome { report, manifest })
}

/// Prefix length needed to cover all perspectives within `analysis_depth`.
pub fn run_rankcover(config: &RunConfig) -> Result<RankCoverOutcome> {
    let session = Session::open(config, "rankcover")?;
    let (report, manifest) = session.run(|s| {
        let questions = s.eval_questions();
        let depth = s.config.analysis_depth;
        let mut summaries = BTreeMap::new();
        let mut per_question = BTreeMap::new();
        for r in s.config.retrievers.clone() {
            let retriever = s.retriever(&r)?;
            let (rkey, art) = s.retrieve_stage(&r, retriever.as_ref(), &questions, QueryKind::Question, depth, &DiversitySpec::None)?;
            let cov = s.coverage_stage(&format!("{}-depth{depth}", r.name), &rkey, &questions, &art.lists)?;
            let mut by_ds: BTreeMap<String, Vec<RankCover>> = BTreeMap::new();
            let mut pq = BTreeMap::new();
            for (q, c) in questions.iter().zip(&cov) {
                let rc = rank_to_cover(c)?;
                by_ds.entry(q.source.as_str().to_string()).or_default().push(rc);
                pq.insert(q.id.clone(), rc);
            }
            summaries.insert(
                r.name.clone(),
                by_ds.iter().map(|(d, v)| (d.clone(), summarize_rank_cover(v))).collect(),
            );
            per_question.insert(r.name.clone(), pq);
        }
        let report = RankCoverReport {
            depth,
            summaries,
            per_question,
        };
        s.store.write_artifact("rankcover.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
        let mut csv = String::from("retriever,dataset,mean_size,percent_covered\n");
        for (r, by_ds) in &report.summaries {
            for (ds, sm) in by_ds {
                csv.push_str(&format!(
                    "{},{},{},{:.6}\n",
                    csv_field(r),
                    csv_field(ds),
                    sm.mean_size.map_or(String::new(), |m| format!("{m:.6}")),
                    sm.percent_covered
                ));
            }
        }
        s.store.write_artifact("rankcover.csv", csv.as_bytes())?;
        Ok(report)
    })?;
    Ok(RankCoverOutcome { report, manifest })
}

/// Stages `run_eval` would execute, with whether each is already cached.
pub fn plan(config: &RunConfig) -> Result<Vec<PlannedStage>> {
    let s = Session::open(config, "plan")?;
    let depth = s.config.max_k();
    let mut out = Vec::new();
    for r in &s.config.retrievers {
        let ikey = s.index_key(r)?;
        if !matches!(r.spec, RetrieverSpec::Precomputed { .. }) {
            out.push(PlannedStage {
                stage: "index".into(),
                name: r.name.clone(),
                cached: s.store.exists("index", &r.name, &ikey),
                key: ikey,
            });
        }
        let rkey = s.retrieval_key(r, QueryKind::Question, depth, &s.config.diversity)?;
        let rname = format!("{}-question", r.name);
        out.push(PlannedStage {
            stage: "retrieve".into(),
            cached: s.store.exists("retrieve", &rname, &rkey),
            name: rname,
            key: rkey.clone(),
        });
        let label = format!("{}{}", r.name, diversity_suffix(&s.config.diversity));
        let ckey = s.coverage_key(&rkey);
        out.push(PlannedStage {
            stage: "coverage".into(),
            cached: s.store.exists("coverage", &label, &ckey),
            name: label,
            key: ckey,
        });
    }
    Ok(out)
}

/// Loads a report JSON written by [`run_eval`].
pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn corpus_of<'a>(corpora: &'a CorpusSet, question_id: &str) -> Option<&'a Corpus> {
    corpora.corpus_for(question_id)
}
