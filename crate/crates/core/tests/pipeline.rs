use std::path::Path;

use divret::pipeline::{plan, run_eval, run_rankcover, run_sycophancy, run_upperbound, RunConfig};
use divret::ranked::write_runs;
use divret::synthetic;
use divret::RankedList;
use serde_json::json;

fn config(dir: &Path, diversity: serde_json::Value, retrievers: serde_json::Value) -> RunConfig {
    let suite = synthetic::generate(8, 7, 4);
    let paths = suite.write_to(&dir.join("in"), "fixture-model").unwrap();
    serde_json::from_value(json!({
        "benchmark": paths.benchmark,
        "corpus": {"shared": paths.corpus},
        "retrievers": retrievers,
        "diversity": diversity,
        "judge": {"kind": "rule"},
        "ks": [1, 5],
        "seed": 3,
        "output_dir": dir.join("out"),
        "max_workers": 2,
        "analysis_depth": 20
    }))
    .unwrap()
}

fn bm25() -> serde_json::Value {
    json!([{"name": "bm25", "kind": "bm25"}])
}

#[test]
fn eval_writes_reports_and_reuses_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"mode": "none"}), bm25());
    let first = run_eval(&cfg).unwrap();
    let csv1 = std::fs::read(&first.report_csv).unwrap();
    let json1 = std::fs::read(&first.report_json).unwrap();
    assert!(String::from_utf8_lossy(&csv1).starts_with("dataset,retriever,corpus,metric,k,value\n"));
    assert!(first.manifest.reused_stages() == 0);

    let planned = plan(&cfg).unwrap();
    assert!(planned.iter().all(|p| p.cached));

    let second = run_eval(&cfg).unwrap();
    assert_eq!(std::fs::read(&second.report_csv).unwrap(), csv1);
    assert_eq!(std::fs::read(&second.report_json).unwrap(), json1);
    assert_eq!(second.manifest.reused_stages(), second.manifest.stages.len());
}

#[test]
fn expansion_beats_plain_bm25_on_synthetic_suite() {
    let dir = tempfile::tempdir().unwrap();
    let base = run_eval(&config(&dir.path().join("a"), json!({"mode": "none"}), bm25())).unwrap();
    let cfg = config(&dir.path().join("b"), json!({"mode": "none"}), bm25());
    let chat = cfg.benchmark.parent().unwrap().join("chat_fixtures.jsonl");
    let mut exp_cfg = cfg.clone();
    exp_cfg.diversity = serde_json::from_value(json!({
        "mode": "expansion",
        "chat": {"kind": "fixture", "path": chat, "model": "fixture-model"}
    }))
    .unwrap();
    let exp = run_eval(&exp_cfg).unwrap();
    let b = base.report.get("bm25").unwrap().macro_average.mrecall[&5];
    let e = exp.report.get("bm25+expansion").unwrap().macro_average.mrecall[&5];
    assert!(e > b, "expansion {e} vs base {b}");
}

#[test]
fn mmr_auto_lambda_is_on_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        json!({"mode": "mmr", "lambda": "auto", "pool": 8, "sim2": {"kind": "hash", "dim": 64}}),
        bm25(),
    );
    let out = run_eval(&cfg).unwrap();
    let l = out.report.lambdas["bm25+mmr"];
    assert!(divret::mmr::LAMBDA_GRID.contains(&l));
}

#[test]
fn missing_corpus_fails_before_output_dir_exists() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), json!({"mode": "none"}), bm25());
    cfg.corpus.shared = Some(dir.path().join("nope.jsonl"));
    let err = run_eval(&cfg).unwrap_err();
    assert!(err.to_string().contains("nope.jsonl"));
    assert!(!cfg.output_dir.exists());
}

#[test]
fn sycophancy_reuses_cached_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"mode": "none"}), bm25());
    let first = run_sycophancy(&cfg).unwrap();
    assert!(first.judge_calls > 0);
    assert_eq!(first.rows.len(), 2);
    let second = run_sycophancy(&cfg).unwrap();
    assert_eq!(second.judge_calls, 0);
    assert_eq!(second.rows, first.rows);
}

#[test]
fn union_dominates_and_rankcover_runs() {
    let dir = tempfile::tempdir().unwrap();
    let retrievers = json!([
        {"name": "bm25", "kind": "bm25"},
        {"name": "hash", "kind": "dense", "provider": {"kind": "hash", "dim": 64}}
    ]);
    let cfg = config(dir.path(), json!({"mode": "none"}), retrievers);
    let ub = run_upperbound(&cfg).unwrap().report;
    for (ds, u) in &ub.union {
        for v in ub.individual[ds].values() {
            assert!(u >= v);
        }
    }
    let rc = run_rankcover(&cfg).unwrap().report;
    assert_eq!(rc.summaries.len(), 2);
}

#[test]
fn upperbound_needs_two_retrievers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"mode": "none"}), bm25());
    assert!(run_upperbound(&cfg).is_err());
}

#[test]
fn shared_cache_keeps_sycophancy_judging_below_three_runs() {
    let dir = tempfile::tempdir().unwrap();
    let single = run_eval(&config(&dir.path().join("a"), json!({"mode": "none"}), bm25())).unwrap();
    let per_run = single.report.reports[0].per_question.len() as u64 * 10 * 2;
    let syc = run_sycophancy(&config(&dir.path().join("b"), json!({"mode": "none"}), bm25())).unwrap();
    assert!(syc.judge_calls < 3 * per_run, "{} vs {}", syc.judge_calls, per_run);
    assert!(syc.judge_cache_hits > 0);
}

#[test]
fn sycophancy_without_stances_points_to_labeling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"mode": "none"}), bm25());
    let text = std::fs::read_to_string(&cfg.benchmark).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            for p in v["perspectives"].as_array_mut().unwrap() {
                p.as_object_mut().unwrap().remove("stance");
            }
            v.to_string() + "\n"
        })
        .collect();
    std::fs::write(&cfg.benchmark, stripped).unwrap();
    let err = run_sycophancy(&cfg).unwrap_err().to_string();
    assert!(err.contains("label-stances"), "{err}");
}

fn precomputed(dir: &Path, name: &str, lists: &[(&str, &[&str])]) -> serde_json::Value {
    let path = dir.join(format!("{name}.jsonl"));
    let runs: Vec<RankedList> = lists
        .iter()
        .map(|(q, ids)| {
            RankedList::from_scored(*q, name, ids.iter().enumerate().map(|(i, d)| (d.to_string(), 10.0 - i as f64)).collect(), 100)
        })
        .collect();
    write_runs(&path, &runs).unwrap();
    json!({"name": name, "kind": "precomputed", "path": path})
}

#[test]
fn complementary_runs_reach_full_union() {
    let dir = tempfile::tempdir().unwrap();
    let suite = synthetic::generate(2, 1, 0);
    let sup: Vec<Vec<String>> = suite.benchmark.questions.iter().map(|q| planted_docs(&suite, &q.id, "sup")).collect();
    let opp: Vec<Vec<String>> = suite.benchmark.questions.iter().map(|q| planted_docs(&suite, &q.id, "opp")).collect();
    let a_lists: Vec<(&str, Vec<&str>)> = suite.benchmark.questions.iter().zip(&sup).map(|(q, d)| (q.id.as_str(), d.iter().map(String::as_str).collect())).collect();
    let b_lists: Vec<(&str, Vec<&str>)> = suite.benchmark.questions.iter().zip(&opp).map(|(q, d)| (q.id.as_str(), d.iter().map(String::as_str).collect())).collect();
    let a: Vec<(&str, &[&str])> = a_lists.iter().map(|(q, d)| (*q, d.as_slice())).collect();
    let b: Vec<(&str, &[&str])> = b_lists.iter().map(|(q, d)| (*q, d.as_slice())).collect();
    let retrievers = json!([precomputed(dir.path(), "only_sup", &a), precomputed(dir.path(), "only_opp", &b)]);
    let mut cfg = config(dir.path(), json!({"mode": "none"}), retrievers);
    let paths = suite.write_to(&dir.path().join("in"), "fixture-model").unwrap();
    cfg.benchmark = paths.benchmark;
    cfg.corpus.shared = Some(paths.corpus);
    let report = run_upperbound(&cfg).unwrap().report;
    assert_eq!(report.union["synthetic"], 100.0);
    assert_eq!(report.individual["synthetic"]["only_sup"], 0.0);
    assert_eq!(report.individual["synthetic"]["only_opp"], 0.0);
}

fn planted_docs(suite: &synthetic::SyntheticSuite, qid: &str, kind: &str) -> Vec<String> {
    suite
        .corpus()
        .passages()
        .iter()
        .filter(|p| p.doc_id.starts_with(&format!("{qid}-{kind}")))
        .map(|p| p.doc_id.clone())
        .collect()
}

#[test]
fn identical_retrievers_union_equals_individual() {
    let dir = tempfile::tempdir().unwrap();
    let retrievers = json!([{"name": "one", "kind": "bm25"}, {"name": "two", "kind": "bm25"}]);
    let mut cfg = config(dir.path(), json!({"mode": "none"}), retrievers);
    cfg.analysis_depth = 3;
    let report = run_upperbound(&cfg).unwrap().report;
    for (ds, u) in &report.union {
        assert_eq!(*u, report.individual[ds]["one"]);
        assert_eq!(*u, report.individual[ds]["two"]);
    }
}

#[test]
fn csv_row_count_is_datasets_by_retrievers_by_ks_by_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let retrievers = json!([
        {"name": "bm25", "kind": "bm25"},
        {"name": "hash", "kind": "dense", "provider": {"kind": "hash", "dim": 32}}
    ]);
    let out = run_eval(&config(dir.path(), json!({"mode": "none"}), retrievers)).unwrap();
    let csv = std::fs::read_to_string(&out.report_csv).unwrap();
    assert_eq!(csv.lines().count() - 1, 2 * 2 * 2);
    for a in &out.manifest.artifacts {
        assert!(dir.path().join("out").join(a).exists(), "{}", a.display());
    }
}
