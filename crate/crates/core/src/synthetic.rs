//! Generated benchmark with planted perspective markers.
//!
//! Every question has a supporting and an opposing perspective. Supporting
//! passages and topical-but-neutral passages share the question's wording;
//! opposing passages share almost none of it, so lexical retrieval with the
//! question buries them below the top five. The canned expansion reply names
//! one perspective per stance, whose wording matches each planted group, so
//! round-robin expansion surfaces both. Coverage is known by construction via
//! [`crate::judge::rule_judge`] markers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::benchmark::{Benchmark, Perspective, Question, Source, Split, Stance};
use crate::corpus::{build_corpus, Corpus, CorpusScope, RawDocument, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::expansion::render_expansion_prompt;
use crate::judge::marker;
use crate::providers::{FixtureChat, FixtureLine};

pub const SUPPORTING_DOCS: usize = 2;
pub const NEUTRAL_DOCS: usize = 4;
pub const OPPOSING_DOCS: usize = 2;

pub struct SyntheticSuite {
    pub benchmark: Benchmark,
    pub documents: Vec<RawDocument>,
    /// Question id → JSON object the chat model "returns" for expansion.
    pub expansion_replies: BTreeMap<String, String>,
}

fn filler(rng: &mut ChaCha8Rng, tag: &str, n: usize) -> String {
    const WORDS: [&str; 12] = [
        "context", "report", "people", "community", "analysis", "evidence", "cost", "study",
        "example", "history", "future", "general",
    ];
    let mut words: Vec<String> = (0..n).map(|i| format!("{}{}", WORDS[i % WORDS.len()], tag)).collect();
    words.shuffle(rng);
    words.join(" ")
}

/// Builds `n` two-perspective questions; `dev_every` > 0 marks every
/// `dev_every`-th question as dev (others test).
pub fn generate(n: usize, seed: u64, dev_every: usize) -> SyntheticSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut questions = Vec::with_capacity(n);
    let mut documents = Vec::new();
    let mut expansion_replies = BTreeMap::new();
    for i in 0..n {
        let qid = format!("s{i:02}");
        let sup_id = format!("{qid}-sup");
        let opp_id = format!("{qid}-opp");
        let split = if dev_every > 0 && i % dev_every == 0 { Split::Dev } else { Split::Test };
        questions.push(Question {
            id: qid.clone(),
            text: format!("Should topic{i} policy be adopted?"),
            source: Source::Synthetic,
            split: Some(split),
            perspectives: vec![
                Perspective::new(&sup_id, format!("Topic{i} policy brings benefit{i} and gain{i}."))
                    .with_stance(Stance::Supporting),
                Perspective::new(&opp_id, format!("Topic{i} policy causes harm{i} and damage{i}."))
                    .with_stance(Stance::Opposing),
            ],
        });
        for j in 0..SUPPORTING_DOCS {
            let tag = format!("q{i}s{j}");
            documents.push(RawDocument::new(
                format!("{qid}-sup-{j}"),
                format!(
                    "Should topic{i} policy be adopted? Yes: benefit{i} and gain{i} follow. {} {}",
                    filler(&mut rng, &tag, 6),
                    marker(&sup_id)
                ),
            ));
        }
        for j in 0..NEUTRAL_DOCS {
            let tag = format!("q{i}n{j}");
            documents.push(RawDocument::new(
                format!("{qid}-neu-{j}"),
                format!(
                    "Should topic{i} policy be adopted? The topic{i} policy debate asks whether topic{i} policy should be adopted. {}",
                    filler(&mut rng, &tag, 4)
                ),
            ));
        }
        for j in 0..OPPOSING_DOCS {
            let tag = format!("q{i}o{j}");
            documents.push(RawDocument::new(
                format!("{qid}-opp-{j}"),
                format!(
                    "Critics warn of harm{i} and damage{i} once adopted. {} {}",
                    filler(&mut rng, &tag, 10),
                    marker(&opp_id)
                ),
            ));
        }
        let reply = format!(
            "{{\"benefits view\": {}, \"harms view\": {}}}",
            json!(format!("It yields benefit{i} and gain{i}.")),
            json!(format!("It leads to harm{i} and damage{i}."))
        );
        expansion_replies.insert(qid, reply);
    }
    SyntheticSuite {
        benchmark: Benchmark {
            name: "synthetic".into(),
            questions,
        },
        documents,
        expansion_replies,
    }
}

impl SyntheticSuite {
    pub fn corpus(&self) -> Corpus {
        build_corpus("synthetic", &self.documents, CorpusScope::Shared, DEFAULT_WINDOW)
            .expect("synthetic documents have unique ids")
    }

    pub fn expansion_chat(&self, model: &str) -> FixtureChat {
        let mut chat = FixtureChat::new(model);
        for q in &self.benchmark.questions {
            chat.insert(&render_expansion_prompt(q), self.expansion_replies[&q.id].clone());
        }
        chat
    }

    pub fn fixture_lines(&self, model: &str) -> Vec<FixtureLine> {
        self.expansion_chat(model).lines()
    }

    /// Writes `benchmark.jsonl`, `corpus.jsonl` and `chat_fixtures.jsonl`.
    pub fn write_to(&self, dir: &Path, model: &str) -> Result<SuitePaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SuitePaths {
            benchmark: dir.join("benchmark.jsonl"),
            corpus: dir.join("corpus.jsonl"),
            chat_fixtures: dir.join("chat_fixtures.jsonl"),
        };
        self.benchmark.save(&paths.benchmark)?;
        self.corpus().save(&paths.corpus)?;
        let mut fx = String::new();
        for line in self.fixture_lines(model) {
            fx.push_str(&serde_json::to_string(&line)?);
            fx.push('\n');
        }
        std::fs::write(&paths.chat_fixtures, fx).map_err(|e| Error::io(&paths.chat_fixtures, e))?;
        Ok(paths)
    }
}

#[derive(Debug, Clone)]
pub struct SuitePaths {
    pub benchmark: PathBuf,
    pub corpus: PathBuf,
    pub chat_fixtures: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::parse_perspectives;

    #[test]
    fn suite_is_valid_and_deterministic() {
        let a = generate(5, 1, 4);
        a.benchmark.validate().unwrap();
        assert!(a.benchmark.questions.iter().all(Question::has_stance_pair));
        assert_eq!(a.documents.len(), 5 * (SUPPORTING_DOCS + NEUTRAL_DOCS + OPPOSING_DOCS));
        let b = generate(5, 1, 4);
        assert_eq!(a.documents, b.documents);
        assert!(a.corpus().passages().iter().all(|p| p.word_count <= DEFAULT_WINDOW));
    }

    #[test]
    fn expansion_reply_keeps_order() {
        let s = generate(1, 0, 0);
        let ps = parse_perspectives(&s.expansion_replies["s00"]).unwrap();
        assert_eq!(ps[0].key, "benefits view");
        assert_eq!(ps[1].key, "harms view");
    }
}
