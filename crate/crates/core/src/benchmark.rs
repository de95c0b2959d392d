//! Perspective-annotated question sets.
//!
//! File format: one JSON object per line,
//! `{"id", "text", "source", "split"?, "perspectives": [{"id", "text", "stance"?}]}`.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::{ChatMessage, ChatProvider};

const STANCE_PROMPT: &str = include_str!("../prompts/stance_labeling.txt");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Supporting,
    Opposing,
    Other,
    #[default]
    Unknown,
}

impl Stance {
    fn is_unknown(&self) -> bool {
        *self == Stance::Unknown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Arguana,
    Kialo,
    Opinionqa,
    Synthetic,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Arguana => "arguana",
            Source::Kialo => "kialo",
            Source::Opinionqa => "opinionqa",
            Source::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perspective {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Stance::is_unknown")]
    pub stance: Stance,
}

impl Perspective {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            stance: Stance::Unknown,
        }
    }

    pub fn with_stance(mut self, stance: Stance) -> Self {
        self.stance = stance;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub perspectives: Vec<Perspective>,
}

impl Question {
    pub fn m(&self) -> usize {
        self.perspectives.len()
    }

    /// Both stances known, one supporting and one opposing.
    pub fn has_stance_pair(&self) -> bool {
        self.m() == 2
            && self.perspective_with(Stance::Supporting).is_some()
            && self.perspective_with(Stance::Opposing).is_some()
    }

    pub fn perspective_with(&self, stance: Stance) -> Option<&Perspective> {
        self.perspectives.iter().find(|p| p.stance == stance)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("question {}: {msg}", self.id)));
        if self.id.is_empty() {
            return Err(Error::Validation("question id is empty".into()));
        }
        if self.m() < 2 {
            return fail(format!("m ≥ 2 required, found {} perspective(s)", self.m()));
        }
        let mut ids = HashSet::new();
        let mut texts = HashSet::new();
        for p in &self.perspectives {
            if p.text.trim().is_empty() {
                return fail(format!("perspective {} has empty text", p.id));
            }
            if !ids.insert(p.id.as_str()) {
                return fail(format!("duplicate perspective id {}", p.id));
            }
            if !texts.insert(p.text.as_str()) {
                return fail(format!("perspective texts not distinct ({})", p.id));
            }
        }
        let supporting = self
            .perspectives
            .iter()
            .filter(|p| p.stance == Stance::Supporting)
            .count();
        if self.m() == 2 && supporting > 1 {
            return fail("more than one supporting perspective".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub questions: Vec<Question>,
}

impl Benchmark {
    pub fn new(name: impl Into<String>, questions: Vec<Question>) -> Result<Self> {
        let b = Self {
            name: name.into(),
            questions,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for q in &self.questions {
            q.validate()?;
            if !ids.insert(q.id.as_str()) {
                return Err(Error::Validation(format!("duplicate question id {}", q.id)));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn sources(&self) -> Vec<Source> {
        let mut s: Vec<Source> = self.questions.iter().map(|q| q.source).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn split(&self, split: Split) -> Vec<&Question> {
        self.questions
            .iter()
            .filter(|q| q.split == Some(split))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for q in &self.questions {
            let line = serde_json::to_string(q)?;
            writeln!(w, "{line}").map_err(|e| Error::io("<benchmark writer>", e))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_benchmark<R: BufRead>(reader: R, name: &str) -> Result<Benchmark> {
    let mut questions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        questions.push(q);
    }
    Benchmark::new(name, questions)
}

pub fn load_benchmark(path: &Path) -> Result<Benchmark> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_benchmark(std::io::BufReader::new(file), &name).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}

/// Seeded, source-stratified dev/test assignment.
///
/// Each source gets exactly `round(dev_fraction * count)` dev questions
/// (half-way cases round away from zero); the rest become test.
pub fn partition_splits(benchmark: &Benchmark, dev_fraction: f64, seed: u64) -> Result<Benchmark> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "dev_fraction must be in (0, 1), got {dev_fraction}"
        )));
    }
    let mut by_source: BTreeMap<Source, Vec<usize>> = BTreeMap::new();
    for (i, q) in benchmark.questions.iter().enumerate() {
        by_source.entry(q.source).or_default().push(i);
    }
    let mut out = benchmark.clone();
    for (source, mut idx) in by_source {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream_salt(source));
        idx.shuffle(&mut rng);
        let n_dev = (dev_fraction * idx.len() as f64).round() as usize;
        for (rank, &i) in idx.iter().enumerate() {
            out.questions[i].split = Some(if rank < n_dev { Split::Dev } else { Split::Test });
        }
    }
    Ok(out)
}

fn stream_salt(source: Source) -> u64 {
    let d = crate::digest::sha256_hex(source.as_str().as_bytes());
    u64::from_str_radix(&d[..16], 16).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StanceOutcome {
    pub question: Question,
    pub warning: Option<String>,
}

pub fn render_stance_prompt(question: &Question) -> Result<Vec<ChatMessage>> {
    if question.m() != 2 {
        return Err(Error::Precondition(format!(
            "stance labeling requires m=2 (question {} has m={})",
            question.id,
            question.m()
        )));
    }
    let content = STANCE_PROMPT
        .replace("{question}", &question.text)
        .replace("{p1}", &question.perspectives[0].text)
        .replace("{p2}", &question.perspectives[1].text);
    Ok(vec![ChatMessage::user(content.trim_end())])
}

/// Asks the provider which of two perspectives supports the question.
///
/// Stances already set in the input are left untouched; only unknown ones are
/// filled. An answer other than "Perspective 1"/"Perspective 2" leaves them
/// unknown and yields a warning.
pub fn label_stances(question: &Question, chat: &dyn ChatProvider) -> Result<StanceOutcome> {
    let messages = render_stance_prompt(question)?;
    let mut q = question.clone();
    if q.perspectives.iter().all(|p| !p.stance.is_unknown()) {
        return Ok(StanceOutcome {
            question: q,
            warning: None,
        });
    }
    let answer = chat.chat(&messages).map_err(|e| e.for_question(&q.id))?;
    let normalized = answer.trim().trim_end_matches('.').to_ascii_lowercase();
    let supporting = match normalized.as_str() {
        "perspective 1" => 0,
        "perspective 2" => 1,
        _ => {
            let warning = format!("question {}: unusable stance answer {:?}", q.id, answer.trim());
            log::warn!("{warning}");
            return Ok(StanceOutcome {
                question: q,
                warning: Some(warning),
            });
        }
    };
    for (i, p) in q.perspectives.iter_mut().enumerate() {
        if p.stance.is_unknown() {
            p.stance = if i == supporting {
                Stance::Supporting
            } else {
                Stance::Opposing
            };
        }
    }
    if let Err(e) = q.validate() {
        let warning = format!("question {}: answer conflicts with existing stances ({e})", q.id);
        log::warn!("{warning}");
        return Ok(StanceOutcome {
            question: question.clone(),
            warning: Some(warning),
        });
    }
    Ok(StanceOutcome {
        question: q,
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::FnChat;

    fn line(id: &str, m: usize) -> String {
        let ps: Vec<String> = (0..m)
            .map(|i| format!(r#"{{"id":"p{i}","text":"view {i}"}}"#))
            .collect();
        format!(
            r#"{{"id":"{id}","text":"Is it?","source":"kialo","perspectives":[{}]}}"#,
            ps.join(",")
        )
    }

    fn q2() -> Question {
        Question {
            id: "q".into(),
            text: "Should we?".into(),
            source: Source::Arguana,
            split: None,
            perspectives: vec![Perspective::new("a", "yes we should"), Perspective::new("b", "no")],
        }
    }

    #[test]
    fn loads_two_lines() {
        let text = format!("{}\n{}\n", line("q1", 2), line("q2", 3));
        let b = parse_benchmark(text.as_bytes(), "t").unwrap();
        assert_eq!(b.questions.len(), 2);
        assert_eq!(b.questions[1].m(), 3);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let text = format!("{}\n{}\n", line("q1", 2), line("q1", 2));
        let err = parse_benchmark(text.as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("duplicate question id")));
    }

    #[test]
    fn rejects_single_perspective() {
        let err = parse_benchmark(line("q1", 1).as_bytes(), "t").unwrap_err();
        assert!(err.to_string().contains("m ≥ 2"), "{err}");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = format!("{}\n{{not json\n", line("q1", 2));
        match parse_benchmark(text.as_bytes(), "t").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_duplicate_perspective_text() {
        let mut q = q2();
        q.perspectives[1].text = q.perspectives[0].text.clone();
        assert!(q.validate().is_err());
    }

    fn many(sources: &[(Source, usize)]) -> Benchmark {
        let mut qs = Vec::new();
        for (s, n) in sources {
            for i in 0..*n {
                let mut q = q2();
                q.id = format!("{}-{i}", s.as_str());
                q.source = *s;
                qs.push(q);
            }
        }
        Benchmark::new("b", qs).unwrap()
    }

    #[test]
    fn split_quarter_of_hundred() {
        let b = partition_splits(&many(&[(Source::Kialo, 100)]), 0.25, 7).unwrap();
        assert_eq!(b.split(Split::Dev).len(), 25);
        assert_eq!(b.split(Split::Test).len(), 75);
    }

    #[test]
    fn split_is_deterministic_and_stratified() {
        let base = many(&[(Source::Kialo, 40), (Source::Arguana, 60)]);
        let a = partition_splits(&base, 0.25, 3).unwrap();
        let b = partition_splits(&base, 0.25, 3).unwrap();
        assert_eq!(a, b);
        let dev = a.split(Split::Dev);
        assert_eq!(dev.iter().filter(|q| q.source == Source::Kialo).count(), 10);
        assert_eq!(dev.iter().filter(|q| q.source == Source::Arguana).count(), 15);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(partition_splits(&many(&[(Source::Kialo, 4)]), 1.0, 0).is_err());
        assert!(partition_splits(&many(&[(Source::Kialo, 4)]), 0.0, 0).is_err());
    }

    #[test]
    fn stance_from_first_perspective() {
        let chat = FnChat::new("s", |_: &[ChatMessage]| Ok("Perspective 1".to_string()));
        let out = label_stances(&q2(), &chat).unwrap();
        assert_eq!(out.question.perspectives[0].stance, Stance::Supporting);
        assert_eq!(out.question.perspectives[1].stance, Stance::Opposing);
        assert!(out.warning.is_none());
    }

    #[test]
    fn stance_unusable_answer_warns() {
        let chat = FnChat::new("s", |_: &[ChatMessage]| Ok("maybe".to_string()));
        let out = label_stances(&q2(), &chat).unwrap();
        assert!(out.question.perspectives.iter().all(|p| p.stance == Stance::Unknown));
        assert!(out.warning.is_some());
    }

    #[test]
    fn stance_requires_two() {
        let mut q = q2();
        q.perspectives.push(Perspective::new("c", "other"));
        let chat = FnChat::new("s", |_: &[ChatMessage]| Ok("Perspective 1".to_string()));
        let err = label_stances(&q, &chat).unwrap_err();
        assert!(err.to_string().contains("stance labeling requires m=2"));
    }

    #[test]
    fn stance_never_overwrites() {
        let mut q = q2();
        q.perspectives[0].stance = Stance::Opposing;
        q.perspectives[1].stance = Stance::Supporting;
        let chat = FnChat::new("s", |_: &[ChatMessage]| panic!("provider must not be called"));
        let out = label_stances(&q, &chat).unwrap();
        assert_eq!(out.question, q);
    }

    #[test]
    fn stance_prompt_contains_both_perspectives() {
        let msgs = render_stance_prompt(&q2()).unwrap();
        assert!(msgs[0].content.contains("Perspective 1: yes we should"));
        assert!(msgs[0].content.contains("Perspective 2: no"));
        assert!(msgs[0].content.contains("Question: Should we?"));
    }
}
