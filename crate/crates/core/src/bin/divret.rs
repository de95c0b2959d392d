use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use divret::benchmark::{label_stances, load_benchmark, partition_splits, Benchmark, Question, Split};
use divret::corpus::{build_corpus, load_corpus, load_page_dump, CorpusScope, RawDocument};
use divret::dense::{dense_search, DenseIndex, EmbeddingProvider, HashEmbedder};
use divret::expansion::expanded_retrieve;
use divret::judge::{CachedJudge, Judge, JudgePrompt, LlmJudge, RandomJudge, RuleJudge, VerdictCache};
use divret::metrics::{coverage_matrix, mrecall_at_k, question_metrics, EvalReport};
use divret::mmr::{fit_normalizer, mmr_rerank, tune_lambda, MmrConfig, LAMBDA_GRID};
use divret::pipeline::{self, RunConfig, TUNING_K};
use divret::providers::stub::StubServer;
use divret::providers::{read_fixture_lines, ChatProvider, FixtureChat, HttpChat, ProviderConfig};
use divret::ranked::{read_runs, write_runs};
use divret::retrieval::{Bm25Retriever, Retriever};
use divret::sparse::{Bm25Params, InvertedIndex};
use divret::synthetic;
use divret::{Error, RankedList, Result};

#[derive(Parser)]
#[command(name = "divret", version, about = "Diverse retrieval and perspective-coverage evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment raw documents into passages.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Build a retrieval index.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Run a BM25 index over benchmark questions.
    Retrieve(RetrieveArgs),
    /// Re-rank runs.
    #[command(subcommand)]
    Rerank(RerankCmd),
    /// Perspective-expanded retrieval.
    Expand(ExpandArgs),
    /// Judge top-k passages of runs against gold perspectives.
    Judge(JudgeArgs),
    /// Config-driven evaluation.
    Eval(EvalArgs),
    /// Default vs supporting vs opposing query comparison.
    Sycophancy(ConfigArg),
    /// Coverage of the union of several retrievers' lists.
    Upperbound(ConfigArg),
    /// Prefix length needed to cover every perspective.
    Rankcover(ConfigArg),
    /// Print a saved report.
    Report(ReportArgs),
    /// Assign dev/test splits.
    Split(SplitArgs),
    /// Label supporting/opposing stances with a chat model.
    LabelStances(LabelArgs),
    /// Write a synthetic benchmark, corpus and chat fixtures.
    Synth(SynthArgs),
    /// Serve chat fixtures and hash embeddings over HTTP until killed.
    ServeStub(ServeArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// From a JSONL of {id, text, source_url?} documents.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        window: usize,
        #[arg(long)]
        html: bool,
    },
    /// From a per-question page dump (`<root>/<qid>/<rank>.html`).
    Pages {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        window: usize,
    },
}

#[derive(Subcommand)]
enum IndexCmd {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        k1: f64,
        #[arg(long, default_value_t = 0.4)]
        b: f64,
        /// Build a hash-embedding dense index of this dimension instead.
        #[arg(long)]
        hash_dim: Option<usize>,
    },
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    split: Option<SplitArg>,
}

#[derive(Subcommand)]
enum RerankCmd {
    Mmr(MmrArgs),
}

#[derive(Args)]
struct MmrArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// A number in [0, 1] or `auto` (tuned on dev questions with the rule judge).
    #[arg(long, default_value = "auto")]
    lambda: String,
    #[arg(long, default_value_t = 100)]
    pool: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    /// Needed for `--lambda auto`.
    #[arg(long)]
    benchmark: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChatArgs {
    /// JSONL of {digest, content} replies.
    #[arg(long, conflicts_with = "base_url")]
    chat_fixtures: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long)]
    auth_env: Option<String>,
}

impl ChatArgs {
    fn provider(&self) -> Result<Arc<dyn ChatProvider>> {
        match (&self.chat_fixtures, &self.base_url) {
            (Some(p), _) => Ok(Arc::new(FixtureChat::load(p, self.model.clone())?)),
            (None, Some(url)) => {
                let mut cfg = ProviderConfig::new(url.clone());
                cfg.model_name = self.model.clone();
                cfg.auth_env_var = self.auth_env.clone();
                Ok(Arc::new(HttpChat::new(cfg)?))
            }
            (None, None) => Err(Error::Config("pass --chat-fixtures or --base-url".into())),
        }
    }
}

#[derive(Args)]
struct ExpandArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    benchmark: PathBuf,
    #[command(flatten)]
    chat: ChatArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    concat_question: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeKind {
    Rule,
    Random,
    Llm,
}

#[derive(Args)]
struct JudgeArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_enum, default_value = "rule")]
    judge: JudgeKind,
    #[arg(long, default_value_t = 0.168)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    shots: u8,
    #[command(flatten)]
    chat: ChatArgs,
    /// Verdict cache (JSONL, appended).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: ReportFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    dev_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[command(flatten)]
    chat: ChatArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Every n-th question goes to the dev split.
    #[arg(long, default_value_t = 4)]
    dev_every: usize,
    #[arg(long, default_value = "fixture-model")]
    model: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    chat_fixtures: PathBuf,
    #[arg(long, default_value_t = 256)]
    embed_dim: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Corpus(c) => corpus_cmd(c),
        Command::Index(IndexCmd::Build { corpus, out, k1, b, hash_dim }) => {
            let corpus = load_corpus(&corpus, CorpusScope::Shared)?;
            match hash_dim {
                Some(dim) => DenseIndex::build(&corpus, &HashEmbedder::new(dim)?, 256)?.save(&out)?,
                None => InvertedIndex::build(&corpus, Bm25Params { k1, b }).save(&out)?,
            }
            log::info!("indexed {} passages into {}", corpus.len(), out.display());
            Ok(())
        }
        Command::Retrieve(a) => retrieve_cmd(a),
        Command::Rerank(RerankCmd::Mmr(a)) => mmr_cmd(a),
        Command::Expand(a) => expand_cmd(a),
        Command::Judge(a) => judge_cmd(a),
        Command::Eval(a) => {
            let cfg = RunConfig::load(&a.config)?;
            if a.dry_run {
                for s in pipeline::plan(&cfg)? {
                    println!("{:<9} {:<28} {} {}", s.stage, s.name, &s.key[..16], if s.cached { "cached" } else { "run" });
                }
                return Ok(());
            }
            let out = pipeline::run_eval(&cfg)?;
            print!("{}", out.report.to_csv());
            log::info!("wrote {} and {}", out.report_json.display(), out.report_csv.display());
            Ok(())
        }
        Command::Sycophancy(a) => {
            let out = pipeline::run_sycophancy(&RunConfig::load(&a.config)?)?;
            println!("retriever\tk\tΔ_sup\tΔ_default\tΔ_opp\tordered");
            let f = |d: Option<f64>| d.map_or("-".to_string(), |v| format!("{v:.3}"));
            for r in &out.rows {
                let (s, d, o) = r.report.deltas();
                println!("{}\t{}\t{}\t{}\t{}\t{:?}", r.retriever, r.k, f(s), f(d), f(o), r.report.ordered);
            }
            log::info!("judge calls {}, cache hits {}", out.judge_calls, out.judge_cache_hits);
            Ok(())
        }
        Command::Upperbound(a) => {
            let out = pipeline::run_upperbound(&RunConfig::load(&a.config)?)?;
            for (ds, row) in &out.report.individual {
                for (r, v) in row {
                    println!("{ds}\t{r}\t{v:.1}");
                }
                println!("{ds}\tunion\t{:.1}", out.report.union[ds]);
            }
            Ok(())
        }
        Command::Rankcover(a) => {
            let out = pipeline::run_rankcover(&RunConfig::load(&a.config)?)?;
            for (r, by_ds) in &out.report.summaries {
                for (ds, s) in by_ds {
                    let mean = s.mean_size.map_or("-".to_string(), |m| format!("{m:.2}"));
                    println!("{r}\t{ds}\t{mean}\t{:.1}", s.percent_covered);
                }
            }
            Ok(())
        }
        Command::Report(a) => {
            let report = pipeline::load_report(&a.input)?;
            match a.format {
                ReportFormat::Csv => print!("{}", report.to_csv()),
                ReportFormat::Table => print_table(&report),
            }
            Ok(())
        }
        Command::Split(a) => {
            let b = partition_splits(&load_benchmark(&a.benchmark)?, a.dev_fraction, a.seed)?;
            b.save(&a.out)
        }
        Command::LabelStances(a) => {
            let b = load_benchmark(&a.benchmark)?;
            let chat = a.chat.provider()?;
            let mut questions = Vec::with_capacity(b.questions.len());
            for q in &b.questions {
                if q.m() != 2 {
                    questions.push(q.clone());
                    continue;
                }
                let outcome = label_stances(q, chat.as_ref())?;
                if let Some(w) = outcome.warning {
                    log::warn!("{}: {w}", q.id);
                }
                questions.push(outcome.question);
            }
            Benchmark::new(b.name, questions)?.save(&a.out)
        }
        Command::Synth(a) => {
            let suite = synthetic::generate(a.n, a.seed, a.dev_every);
            let paths = suite.write_to(&a.out_dir, &a.model)?;
            let config = serde_json::json!({
                "benchmark": "benchmark.jsonl",
                "corpus": {"shared": "corpus.jsonl"},
                "retrievers": [{"name": "bm25", "kind": "bm25"}],
                "diversity": {"mode": "expansion", "chat": {"kind": "fixture", "path": "chat_fixtures.jsonl", "model": a.model}},
                "judge": {"kind": "rule"},
                "seed": a.seed,
                "output_dir": "out"
            });
            let cfg_path = a.out_dir.join("config.json");
            std::fs::write(&cfg_path, serde_json::to_string_pretty(&config)?).map_err(|e| Error::io(&cfg_path, e))?;
            println!("{}\n{}\n{}\n{}", paths.benchmark.display(), paths.corpus.display(), paths.chat_fixtures.display(), cfg_path.display());
            Ok(())
        }
        Command::ServeStub(a) => {
            let table: HashMap<String, String> = read_fixture_lines(&a.chat_fixtures)?
                .into_iter()
                .map(|l| (l.digest, l.content))
                .collect();
            let server = StubServer::fixtures(table, a.embed_dim)?;
            println!("{}", server.base_url());
            std::io::stdout().flush().ok();
            loop {
                std::thread::park();
            }
        }
    }
}

fn corpus_cmd(c: CorpusCmd) -> Result<()> {
    match c {
        CorpusCmd::Build { input, out, window, html } => {
            let file = std::fs::File::open(&input).map_err(|e| Error::io(&input, e))?;
            let mut docs = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&input, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let mut d: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: input.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if html {
                    d.text = divret::corpus::strip_html(&d.text);
                }
                docs.push(d);
            }
            let id = out.file_stem().map_or("corpus".into(), |s| s.to_string_lossy().into_owned());
            let corpus = build_corpus(&id, &docs, CorpusScope::Shared, window)?;
            corpus.save(&out)?;
            log::info!("{} documents → {} passages", docs.len(), corpus.len());
            Ok(())
        }
        CorpusCmd::Pages { root, out_dir, window } => {
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            for (qid, corpus) in load_page_dump(&root, window)? {
                corpus.save(&out_dir.join(format!("{qid}.jsonl")))?;
            }
            Ok(())
        }
    }
}

fn selected(b: &Benchmark, split: Option<SplitArg>) -> Vec<Question> {
    let split = split.map(Split::from);
    b.questions.iter().filter(|q| split.is_none() || q.split == split).cloned().collect()
}

enum AnyIndex {
    Sparse(InvertedIndex),
    Dense(DenseIndex, HashEmbedder),
}

fn load_any_index(path: &Path) -> Result<AnyIndex> {
    if let Ok(idx) = InvertedIndex::load(path) {
        return Ok(AnyIndex::Sparse(idx));
    }
    let idx = DenseIndex::load(path)?;
    let emb = HashEmbedder::new(idx.dim)?;
    if idx.provider_id != emb.id() {
        return Err(Error::Config(format!(
            "dense index built by {}; only hash indexes can be queried from the CLI",
            idx.provider_id
        )));
    }
    Ok(AnyIndex::Dense(idx, emb))
}

fn retrieve_cmd(a: RetrieveArgs) -> Result<()> {
    let b = load_benchmark(&a.benchmark)?;
    let index = load_any_index(&a.index)?;
    let lists = selected(&b, a.split)
        .iter()
        .map(|q| match &index {
            AnyIndex::Sparse(i) => Ok(i.search(&q.id, &q.text, a.k)),
            AnyIndex::Dense(i, e) => {
                let v = e.embed_batch(std::slice::from_ref(&q.text))?.remove(0);
                dense_search(i, &q.id, &v, a.k)
            }
        })
        .collect::<Result<Vec<RankedList>>>()?;
    write_runs(&a.out, &lists)
}

fn mmr_cmd(a: MmrArgs) -> Result<()> {
    let pools = read_runs(&a.runs)?;
    let corpus = load_corpus(&a.corpus, CorpusScope::Shared)?;
    let embedder = HashEmbedder::new(a.dim)?;
    let norm = fit_normalizer(&pools)?;
    let rerank = |lists: &[&RankedList], lambda: f64, k: usize| -> Result<Vec<RankedList>> {
        let cfg = MmrConfig::new(lambda, a.pool, k)?;
        lists
            .iter()
            .map(|p| mmr_rerank(p, &cfg, &norm, &embedder, |d| corpus.get(d).map(|x| x.text.as_str())))
            .collect()
    };
    let lambda = if a.lambda == "auto" {
        let path = a
            .benchmark
            .as_ref()
            .ok_or_else(|| Error::Config("--lambda auto needs --benchmark".into()))?;
        let b = load_benchmark(path)?;
        let dev: Vec<(&Question, &RankedList)> = b
            .split(Split::Dev)
            .into_iter()
            .filter_map(|q| pools.iter().find(|p| p.question_id == q.id).map(|p| (q, p)))
            .collect();
        if dev.is_empty() {
            return Err(Error::Config("no dev-split question has a run to tune on".into()));
        }
        let lists: Vec<&RankedList> = dev.iter().map(|(_, p)| *p).collect();
        let l = tune_lambda(&LAMBDA_GRID, |l| {
            let reranked = rerank(&lists, l, TUNING_K.min(a.pool))?;
            let mut hits = 0u32;
            for ((q, _), r) in dev.iter().zip(&reranked) {
                let cov = coverage_matrix(q, r, |d| corpus.get(d), &RuleJudge)?;
                hits += u32::from(mrecall_at_k(&cov, TUNING_K)?);
            }
            Ok(f64::from(hits) / dev.len() as f64)
        })?;
        log::info!("tuned lambda = {l}");
        l
    } else {
        a.lambda
            .parse()
            .map_err(|_| Error::Config(format!("--lambda must be a number or auto, got {}", a.lambda)))?
    };
    let all: Vec<&RankedList> = pools.iter().collect();
    write_runs(&a.out, &rerank(&all, lambda, a.k)?)
}

fn expand_cmd(a: ExpandArgs) -> Result<()> {
    let b = load_benchmark(&a.benchmark)?;
    let retriever = Bm25Retriever::new("bm25", InvertedIndex::load(&a.index)?);
    let chat = a.chat.provider()?;
    let mut lists = Vec::new();
    for q in &b.questions {
        let run = expanded_retrieve(q, &retriever as &dyn Retriever, chat.as_ref(), a.k, a.concat_question)?;
        lists.push(run.merged);
    }
    write_runs(&a.out, &lists)
}

fn judge_cmd(a: JudgeArgs) -> Result<()> {
    let b = load_benchmark(&a.benchmark)?;
    let corpus = load_corpus(&a.corpus, CorpusScope::Shared)?;
    let runs = read_runs(&a.runs)?;
    let inner: Arc<dyn Judge> = match a.judge {
        JudgeKind::Rule => Arc::new(RuleJudge),
        JudgeKind::Random => Arc::new(RandomJudge::new(a.rate, a.seed)?),
        JudgeKind::Llm => {
            let prompt = if a.shots == 1 { JudgePrompt::one_shot() } else { JudgePrompt::zero_shot() };
            Arc::new(LlmJudge::new(a.chat.provider()?, prompt))
        }
    };
    let cache = Arc::new(match &a.cache {
        Some(p) => VerdictCache::open(p)?,
        None => VerdictCache::in_memory(),
    });
    let judge = CachedJudge::new(inner, cache);
    let mut per_question = Vec::new();
    let mut matrices = Vec::new();
    for run in &runs {
        let q = b
            .get(&run.question_id)
            .ok_or_else(|| Error::Validation(format!("run for unknown question {}", run.question_id)))?;
        let top = run.truncated(a.k);
        let cov = coverage_matrix(q, &top, |d| corpus.get(d), &judge)?;
        per_question.push(question_metrics(q.source.as_str(), &cov, &[a.k])?);
        matrices.push(cov);
    }
    let text = serde_json::to_string_pretty(&matrices)?;
    std::fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))?;
    let rid = runs.first().map_or("runs".to_string(), |r| r.retriever_id.clone());
    print!("{}", EvalReport::new(&rid, &corpus.id, &[a.k], per_question).to_csv());
    log::info!("judge calls {}, cache hits {}, malformed {}", judge.misses(), judge.hits(), judge.malformed());
    Ok(())
}

fn print_table(report: &pipeline::RunReport) {
    let mut rows: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for r in &report.reports {
        for (ds, agg) in r.per_dataset.iter().chain(std::iter::once((&"macro".to_string(), &r.macro_average))) {
            let cells = r
                .ks
                .iter()
                .map(|k| format!("MR@{k}={:.1} P@{k}={:.1}", agg.mrecall[k], agg.precision[k]))
                .collect();
            rows.insert((r.retriever.clone(), ds.clone()), cells);
        }
    }
    for ((r, ds), cells) in rows {
        println!("{r:<24} {ds:<12} {}", cells.join("  "));
    }
}
