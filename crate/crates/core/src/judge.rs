//! Perspective detection: does a passage contain a given perspective?
//!
//! Backends: an LLM behind [`ChatProvider`], a marker-matching rule used by
//! synthetic fixtures, and a seeded random baseline. [`CachedJudge`] puts a
//! digest-keyed, append-only verdict cache in front of any of them.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmark::Perspective;
use crate::corpus::Passage;
use crate::digest::fields_digest;
use crate::error::{Error, Result};
use crate::providers::{ChatMessage, ChatProvider};

const SYSTEM_PROMPT: &str = include_str!("../prompts/judge_system.txt");
const USER_TEMPLATE: &str = include_str!("../prompts/judge_user.txt");
const ONE_SHOT_USER: &str = include_str!("../prompts/judge_one_shot_user.txt");
const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub doc_id: String,
    pub perspective_id: String,
    pub label: bool,
    pub judge_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    #[serde(default)]
    pub from_cache: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub malformed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneShotExample {
    pub user: String,
    pub assistant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub version: String,
    pub system: String,
    pub user_template: String,
    #[serde(default)]
    pub shot: Option<OneShotExample>,
}

impl JudgePrompt {
    pub fn zero_shot() -> Self {
        Self {
            version: PROMPT_VERSION.into(),
            system: SYSTEM_PROMPT.trim_end().into(),
            user_template: USER_TEMPLATE.trim_end().into(),
            shot: None,
        }
    }

    pub fn one_shot() -> Self {
        Self {
            shot: Some(OneShotExample {
                user: ONE_SHOT_USER.trim_end().into(),
                assistant: "No".into(),
            }),
            ..Self::zero_shot()
        }
    }

    /// Identity used in cache keys; changes whenever any text changes.
    pub fn fingerprint(&self) -> String {
        let shot = self.shot.as_ref();
        fields_digest(&[
            &self.version,
            &self.system,
            &self.user_template,
            shot.map_or("", |s| s.user.as_str()),
            shot.map_or("", |s| s.assistant.as_str()),
        ])
    }
}

/// System turn, optional example exchange, then the filled user turn.
pub fn render_prompt(document: &str, statement: &str, prompt: &JudgePrompt) -> Result<Vec<ChatMessage>> {
    for slot in ["{document}", "{statement}"] {
        if !prompt.user_template.contains(slot) {
            return Err(Error::Template(format!("user template lacks {slot}")));
        }
    }
    // fill statement first so a document containing "{statement}" is inert
    let user = prompt
        .user_template
        .replace("{statement}", &statement.replace('{', "\u{0}"))
        .replace("{document}", document)
        .replace('\u{0}', "{");
    let mut msgs = vec![ChatMessage::system(prompt.system.clone())];
    if let Some(shot) = &prompt.shot {
        msgs.push(ChatMessage::user(shot.user.clone()));
        msgs.push(ChatMessage::assistant(shot.assistant.clone()));
    }
    msgs.push(ChatMessage::user(user));
    Ok(msgs)
}

/// `(label, malformed)`: "yes…" → true, "no…" → false, anything else →
/// false and flagged.
pub fn parse_judge_answer(response: &str) -> (bool, bool) {
    let t = response.trim().to_ascii_lowercase();
    if t.starts_with("yes") {
        (true, false)
    } else if t.starts_with("no") {
        (false, false)
    } else {
        (false, true)
    }
}

pub trait Judge: Send + Sync {
    fn id(&self) -> &str;
    /// Everything besides the texts that determines a verdict.
    fn cache_namespace(&self) -> String {
        self.id().to_string()
    }
    fn judge(&self, doc: &Passage, perspective: &Perspective) -> Result<Verdict>;
}

pub struct LlmJudge {
    id: String,
    chat: Arc<dyn ChatProvider>,
    prompt: JudgePrompt,
    malformed: AtomicU64,
    calls: AtomicU64,
}

impl LlmJudge {
    pub fn new(chat: Arc<dyn ChatProvider>, prompt: JudgePrompt) -> Self {
        let shots = if prompt.shot.is_some() { 1 } else { 0 };
        Self {
            id: format!("llm:{}:{shots}shot", chat.id()),
            chat,
            prompt,
            malformed: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        }
    }

    pub fn malformed_count(&self) -> u64 {
        self.malformed.load(Ordering::Relaxed)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Judges one pair through the chat provider.
pub fn llm_judge(doc: &Passage, perspective: &Perspective, chat: &dyn ChatProvider, prompt: &JudgePrompt) -> Result<Verdict> {
    let msgs = render_prompt(&doc.text, &perspective.text, prompt)?;
    let raw = chat.chat(&msgs)?;
    let (label, malformed) = parse_judge_answer(&raw);
    if malformed {
        log::warn!("malformed judge answer for ({}, {}): {:?}", doc.doc_id, perspective.id, raw);
    }
    Ok(Verdict {
        doc_id: doc.doc_id.clone(),
        perspective_id: perspective.id.clone(),
        label,
        judge_id: format!("llm:{}", chat.id()),
        raw_response: Some(raw),
        from_cache: false,
        malformed,
    })
}

impl Judge for LlmJudge {
    fn id(&self) -> &str {
        &self.id
    }

    fn cache_namespace(&self) -> String {
        format!("{}|{}", self.id, self.prompt.fingerprint())
    }

    fn judge(&self, doc: &Passage, perspective: &Perspective) -> Result<Verdict> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut v = llm_judge(doc, perspective, self.chat.as_ref(), &self.prompt)?;
        if v.malformed {
            self.malformed.fetch_add(1, Ordering::Relaxed);
        }
        v.judge_id = self.id.clone();
        Ok(v)
    }
}

pub fn marker(perspective_id: &str) -> String {
    format!("[[P:{perspective_id}]]")
}

/// True iff the passage contains `[[P:<perspective id>]]`.
pub fn rule_judge(doc: &Passage, perspective: &Perspective) -> Verdict {
    Verdict {
        doc_id: doc.doc_id.clone(),
        perspective_id: perspective.id.clone(),
        label: doc.text.contains(&marker(&perspective.id)),
        judge_id: "rule".into(),
        raw_response: None,
        from_cache: false,
        malformed: false,
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RuleJudge;

impl Judge for RuleJudge {
    fn id(&self) -> &str {
        "rule"
    }

    fn judge(&self, doc: &Passage, perspective: &Perspective) -> Result<Verdict> {
        Ok(rule_judge(doc, perspective))
    }
}

/// I.i.d. Bernoulli(`rate`) labels from a seeded stream.
pub fn random_judge(rate: f64, seed: u64) -> Result<impl Iterator<Item = bool>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Precondition(format!("rate {rate} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(std::iter::repeat_with(move || rng.gen_bool(rate)))
}

/// Random baseline as a [`Judge`]: each pair gets its own seeded draw, so
/// labels do not depend on evaluation order.
#[derive(Debug, Clone)]
pub struct RandomJudge {
    id: String,
    rate: f64,
    seed: u64,
}

impl RandomJudge {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Precondition(format!("rate {rate} outside [0, 1]")));
        }
        Ok(Self {
            id: format!("random:{rate}:{seed}"),
            rate,
            seed,
        })
    }
}

impl Judge for RandomJudge {
    fn id(&self) -> &str {
        &self.id
    }

    fn judge(&self, doc: &Passage, perspective: &Perspective) -> Result<Verdict> {
        let d = fields_digest(&[&self.seed.to_string(), &doc.doc_id, &perspective.id]);
        let pair_seed = u64::from_str_radix(&d[..16], 16).unwrap_or(0);
        let label = ChaCha8Rng::seed_from_u64(pair_seed).gen_bool(self.rate);
        Ok(Verdict {
            doc_id: doc.doc_id.clone(),
            perspective_id: perspective.id.clone(),
            label,
            judge_id: self.id.clone(),
            raw_response: None,
            from_cache: false,
            malformed: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    /// Percent.
    pub accuracy: f64,
    /// Percent, positive class = "contains".
    pub f1: f64,
    /// Fraction predicted positive.
    pub pos_rate: f64,
}

pub fn evaluate_labels(predictions: &[bool], gold: &[bool]) -> Result<JudgeScores> {
    if predictions.len() != gold.len() {
        return Err(Error::Precondition(format!(
            "{} predictions vs {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Precondition("no labels to evaluate".into()));
    }
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        if p == g {
            correct += 1;
        }
    }
    let n = gold.len() as f64;
    let f1 = if tp + fp + fneg == 0 {
        // no positives anywhere: predictions agree with gold perfectly
        100.0
    } else {
        100.0 * 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    Ok(JudgeScores {
        accuracy: 100.0 * correct as f64 / n,
        f1,
        pos_rate: (tp + fp) as f64 / n,
    })
}

pub fn evaluate_judge(predictions: &[Verdict], gold: &[bool]) -> Result<JudgeScores> {
    let labels: Vec<bool> = predictions.iter().map(|v| v.label).collect();
    evaluate_labels(&labels, gold)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    label: bool,
    judge_id: String,
    ts: u64,
}

/// Verdict labels keyed by `digest(namespace, document text, perspective text)`.
///
/// Optionally backed by an append-only JSONL file; later lines win on load.
pub struct VerdictCache {
    entries: Mutex<HashMap<String, bool>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl VerdictCache {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(HashMap::new()),
            file: None,
            path: None,
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let l: CacheLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(l.key, l.label);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            entries: Mutex::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn key(namespace: &str, document: &str, perspective: &str) -> String {
        fields_digest(&[namespace, document, perspective])
    }

    pub fn get(&self, key: &str) -> Option<bool> {
        self.entries.lock().ok()?.get(key).copied()
    }

    pub fn insert(&self, key: String, label: bool, judge_id: &str) -> Result<()> {
        if let Some(file) = &self.file {
            let ts = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                label,
                judge_id: judge_id.to_string(),
                ts,
            })?;
            let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
            let path = self.path.as_deref().unwrap_or(Path::new("<cache>"));
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        if let Ok(mut m) = self.entries.lock() {
            m.insert(key, label);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct CachedJudge {
    inner: Arc<dyn Judge>,
    cache: Arc<VerdictCache>,
    namespace: String,
    hits: AtomicU64,
    misses: AtomicU64,
    malformed: AtomicU64,
}

impl CachedJudge {
    pub fn new(inner: Arc<dyn Judge>, cache: Arc<VerdictCache>) -> Self {
        let namespace = inner.cache_namespace();
        Self {
            inner,
            cache,
            namespace,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            malformed: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Number of verdicts computed by the wrapped judge.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn malformed(&self) -> u64 {
        self.malformed.load(Ordering::Relaxed)
    }
}

impl Judge for CachedJudge {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn cache_namespace(&self) -> String {
        self.namespace.clone()
    }

    fn judge(&self, doc: &Passage, perspective: &Perspective) -> Result<Verdict> {
        let key = VerdictCache::key(&self.namespace, &doc.text, &perspective.text);
        if let Some(label) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Verdict {
                doc_id: doc.doc_id.clone(),
                perspective_id: perspective.id.clone(),
                label,
                judge_id: self.inner.id().to_string(),
                raw_response: None,
                from_cache: true,
                malformed: false,
            });
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.judge(doc, perspective)?;
        if v.malformed {
            self.malformed.fetch_add(1, Ordering::Relaxed);
        }
        self.cache.insert(key, v.label, &v.judge_id)?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::FnChat;

    fn passage(text: &str) -> Passage {
        Passage {
            doc_id: "d".into(),
            text: text.into(),
            word_count: text.split_whitespace().count(),
            parent_doc: "d".into(),
            offset: 0,
            source_url: None,
        }
    }

    #[test]
    fn zero_shot_has_two_messages() {
        let m = render_prompt("doc text", "a claim", &JudgePrompt::zero_shot()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].role, "system");
        assert!(m[1].content.contains("Document: doc text"));
        assert!(m[1].content.contains("Statement: a claim"));
    }

    #[test]
    fn one_shot_has_four_messages() {
        let m = render_prompt("doc", "claim", &JudgePrompt::one_shot()).unwrap();
        let roles: Vec<&str> = m.iter().map(|x| x.role.as_str()).collect();
        assert_eq!(roles, vec!["system", "user", "assistant", "user"]);
        assert_eq!(m[2].content, "No");
        assert!(m[1].content.contains("Prohibition is an effective method"));
    }

    #[test]
    fn template_without_statement_slot() {
        let mut p = JudgePrompt::zero_shot();
        p.user_template = "Document: {document}".into();
        assert!(matches!(render_prompt("d", "s", &p), Err(Error::Template(_))));
    }

    #[test]
    fn slot_text_in_document_is_not_substituted() {
        let m = render_prompt("see {statement}", "claim {document}", &JudgePrompt::zero_shot()).unwrap();
        assert!(m[1].content.contains("Document: see {statement}"));
        assert!(m[1].content.contains("Statement: claim {document}"));
    }

    #[test]
    fn answer_parsing() {
        assert_eq!(parse_judge_answer("Yes"), (true, false));
        assert_eq!(parse_judge_answer("No\n"), (false, false));
        assert_eq!(parse_judge_answer("  yes, clearly"), (true, false));
        assert_eq!(parse_judge_answer("It depends"), (false, true));
    }

    #[test]
    fn llm_judge_counts_malformed() {
        let chat: Arc<dyn ChatProvider> = Arc::new(FnChat::new("c", |_: &[ChatMessage]| Ok("It depends".to_string())));
        let j = LlmJudge::new(chat, JudgePrompt::zero_shot());
        let v = j.judge(&passage("x"), &Perspective::new("p", "y")).unwrap();
        assert!(!v.label && v.malformed);
        assert_eq!(j.malformed_count(), 1);
    }

    #[test]
    fn rule_markers() {
        let d = passage("text [[P:p1]] more [[P:p3]]");
        assert!(rule_judge(&d, &Perspective::new("p1", "a")).label);
        assert!(!rule_judge(&d, &Perspective::new("p2", "b")).label);
        assert!(rule_judge(&d, &Perspective::new("p3", "c")).label);
    }

    #[test]
    fn random_extremes() {
        assert!(random_judge(0.0, 1).unwrap().take(1000).all(|b| !b));
        assert!(random_judge(1.0, 1).unwrap().take(1000).all(|b| b));
        assert!(random_judge(1.1, 1).is_err());
    }

    #[test]
    fn random_rate_within_three_sigma() {
        let n = 10_000.0;
        let pos = random_judge(0.168, 42).unwrap().take(10_000).filter(|b| *b).count() as f64;
        let sigma = (n * 0.168 * 0.832f64).sqrt();
        assert!((pos - 1680.0).abs() <= 3.0 * sigma, "{pos}");
    }

    #[test]
    fn scores_perfect_and_all_negative() {
        let gold: Vec<bool> = (0..1000).map(|i| i < 168).collect();
        let perfect = evaluate_labels(&gold, &gold).unwrap();
        assert_eq!((perfect.accuracy, perfect.f1), (100.0, 100.0));
        let neg = evaluate_labels(&vec![false; 1000], &gold).unwrap();
        assert!((neg.accuracy - 83.2).abs() < 1e-9);
        assert_eq!(neg.f1, 0.0);
        assert_eq!(neg.pos_rate, 0.0);
        assert!(evaluate_labels(&[true], &[true, false]).is_err());
        let none = evaluate_labels(&[false, false], &[false, false]).unwrap();
        assert_eq!(none.f1, 100.0);
    }

    #[test]
    fn cache_is_transparent() {
        let chat: Arc<dyn ChatProvider> = Arc::new(FnChat::new("c", |_: &[ChatMessage]| Ok("Yes".to_string())));
        let j = CachedJudge::new(Arc::new(LlmJudge::new(chat, JudgePrompt::zero_shot())), Arc::new(VerdictCache::in_memory()));
        let (d, p) = (passage("x"), Perspective::new("p", "y"));
        let a = j.judge(&d, &p).unwrap();
        let b = j.judge(&d, &p).unwrap();
        assert_eq!(a.label, b.label);
        assert!(!a.from_cache && b.from_cache);
        assert_eq!((j.hits(), j.misses()), (1, 1));
    }

    #[test]
    fn cache_file_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let (d, p) = (passage("x [[P:p]]"), Perspective::new("p", "y"));
        {
            let j = CachedJudge::new(Arc::new(RuleJudge), Arc::new(VerdictCache::open(&path).unwrap()));
            assert!(j.judge(&d, &p).unwrap().label);
        }
        let j = CachedJudge::new(Arc::new(RuleJudge), Arc::new(VerdictCache::open(&path).unwrap()));
        let v = j.judge(&d, &p).unwrap();
        assert!(v.label && v.from_cache);
        let line: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&path).unwrap().lines().next().unwrap()).unwrap();
        for f in ["key", "label", "judge_id", "ts"] {
            assert!(line.get(f).is_some(), "missing {f}");
        }
    }
}
