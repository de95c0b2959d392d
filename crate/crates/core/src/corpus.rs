//! Passage corpora: HTML cleanup, fixed-width word windows, persistence.
//!
//! A word is a maximal run of non-whitespace characters. Passage text is the
//! window's words joined by single spaces, so passage digests are stable
//! regardless of the source document's layout.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub text: String,
    #[serde(skip)]
    pub word_count: usize,
    pub parent_doc: String,
    pub offset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusScope {
    Shared,
    PerQuestion(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub passage_count: usize,
    pub doc_count: usize,
    pub avg_words: f64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub id: String,
    pub scope: CorpusScope,
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    stats: CorpusStats,
}

/// A source document before segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
}

impl RawDocument {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source_url: None,
        }
    }
}

/// Cuts a document into consecutive disjoint windows of `window` words.
///
/// Every passage but the last holds exactly `window` words. Whitespace-only
/// input yields no passages.
pub fn segment_document(doc_text: &str, parent_id: &str, window: usize) -> Result<Vec<Passage>> {
    if window == 0 {
        return Err(Error::Precondition("window must be >= 1".into()));
    }
    let words: Vec<&str> = doc_text.split_whitespace().collect();
    Ok(words
        .chunks(window)
        .enumerate()
        .map(|(offset, chunk)| Passage {
            doc_id: format!("{parent_id}#{offset}"),
            text: chunk.join(" "),
            word_count: chunk.len(),
            parent_doc: parent_id.to_string(),
            offset,
            source_url: None,
        })
        .collect())
}

const BLOCK_TAGS: &[&str] = &[
    "p", "div", "br", "li", "ul", "ol", "tr", "td", "th", "table", "h1", "h2", "h3", "h4", "h5",
    "h6", "section", "article", "header", "footer", "nav", "blockquote", "pre", "hr", "title",
    "body", "html", "head", "dd", "dt", "dl", "aside", "main", "figure", "figcaption",
];

/// Reduces an HTML page to plain text.
///
/// Drops comments, `<script>`/`<style>` blocks and all tags; block-level tags
/// become word breaks, inline tags vanish. Common entities are decoded after
/// tag removal and whitespace is collapsed to single spaces.
pub fn strip_html(page: &str) -> String {
    let lower = page.to_ascii_lowercase();
    let mut out = String::with_capacity(page.len());
    let mut i = 0;
    while i < page.len() {
        let rest = &page[i..];
        if !rest.starts_with('<') {
            let next = rest.find('<').map_or(page.len(), |n| i + n);
            out.push_str(&page[i..next]);
            i = next;
            continue;
        }
        if lower[i..].starts_with("<!--") {
            i = lower[i..].find("-->").map_or(page.len(), |n| i + n + 3);
            continue;
        }
        let Some(close) = rest.find('>') else {
            // unterminated tag: keep the rest as text
            out.push_str(rest);
            break;
        };
        let tag = tag_name(&lower[i + 1..i + close]);
        i += close + 1;
        if tag == "script" || tag == "style" {
            let end = format!("</{tag}");
            i = match lower[i..].find(&end) {
                Some(n) => lower[i + n..].find('>').map_or(page.len(), |m| i + n + m + 1),
                None => page.len(),
            };
            out.push(' ');
        } else if BLOCK_TAGS.contains(&tag.as_str()) {
            out.push(' ');
        }
    }
    let decoded = decode_entities(&out);
    decoded.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn tag_name(inner: &str) -> String {
    inner
        .trim_start_matches('/')
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect()
}

fn decode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let semi = rest[..rest.len().min(12)].find(';');
        let decoded = semi.and_then(|end| decode_entity(&rest[1..end]).map(|c| (c, end)));
        match decoded {
            Some((c, end)) => {
                out.push(c);
                rest = &rest[end + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_entity(name: &str) -> Option<char> {
    match name {
        "amp" => Some('&'),
        "lt" => Some('<'),
        "gt" => Some('>'),
        "quot" => Some('"'),
        "apos" => Some('\''),
        "nbsp" => Some(' '),
        _ => {
            let num = name.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse().ok()?,
            };
            char::from_u32(code)
        }
    }
}

impl Corpus {
    pub fn from_passages(id: impl Into<String>, scope: CorpusScope, passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        let mut positions = HashSet::new();
        let mut parents = HashSet::new();
        let mut words = 0usize;
        for (i, p) in passages.iter().enumerate() {
            if by_id.insert(p.doc_id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate doc_id {}", p.doc_id)));
            }
            if !positions.insert((p.parent_doc.as_str(), p.offset)) {
                return Err(Error::Validation(format!(
                    "duplicate (parent_doc, offset) = ({}, {})",
                    p.parent_doc, p.offset
                )));
            }
            parents.insert(p.parent_doc.as_str());
            words += p.word_count;
        }
        let stats = CorpusStats {
            passage_count: passages.len(),
            doc_count: parents.len(),
            avg_words: if passages.is_empty() {
                0.0
            } else {
                words as f64 / passages.len() as f64
            },
        };
        Ok(Self {
            id: id.into(),
            scope,
            passages,
            by_id,
            stats,
        })
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    pub fn get(&self, doc_id: &str) -> Option<&Passage> {
        self.by_id.get(doc_id).map(|&i| &self.passages[i])
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.passages {
            let line = serde_json::to_string(p)?;
            writeln!(w, "{line}").map_err(|e| Error::io("<corpus writer>", e))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Segments every document and assembles a corpus with `doc_id = parent#offset`.
pub fn build_corpus(id: &str, docs: &[RawDocument], scope: CorpusScope, window: usize) -> Result<Corpus> {
    let mut seen = HashSet::new();
    for d in docs {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::Validation(format!("duplicate document id {}", d.id)));
        }
    }
    let segmented: Vec<Vec<Passage>> = docs
        .par_iter()
        .map(|d| {
            segment_document(&d.text, &d.id, window).map(|mut ps| {
                for p in &mut ps {
                    p.source_url = d.source_url.clone();
                }
                ps
            })
        })
        .collect::<Result<_>>()?;
    Corpus::from_passages(id, scope, segmented.into_iter().flatten().collect())
}

pub fn load_corpus(path: &Path, scope: CorpusScope) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut passages = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut p: Passage = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        p.word_count = p.text.split_whitespace().count();
        passages.push(p);
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::from_passages(id, scope, passages)
}

/// Reads a page dump laid out as `{question_id}/{rank}.html|.txt` and builds
/// one corpus per question. HTML pages pass through [`strip_html`]; a
/// sibling `{rank}.url` file, when present, supplies the source URL.
pub fn load_page_dump(root: &Path, window: usize) -> Result<BTreeMap<String, Corpus>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let qid = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mut pages: Vec<(u64, std::path::PathBuf, bool)> = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
            let is_html = match ext {
                "html" | "htm" => true,
                "txt" => false,
                _ => continue,
            };
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let Ok(rank) = stem.parse::<u64>() else { continue };
            pages.push((rank, path, is_html));
        }
        pages.sort();
        let mut docs = Vec::with_capacity(pages.len());
        for (rank, path, is_html) in pages {
            let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let raw = String::from_utf8_lossy(&raw);
            let text = if is_html { strip_html(&raw) } else { raw.into_owned() };
            let url_path = path.with_extension("url");
            let source_url = std::fs::read_to_string(&url_path).ok().map(|s| s.trim().to_string());
            docs.push(RawDocument {
                id: format!("{qid}/{rank}"),
                text,
                source_url,
            });
        }
        let corpus = build_corpus(&qid, &docs, CorpusScope::PerQuestion(qid.clone()), window)?;
        out.insert(qid, corpus);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn segments_250_words() {
        let ps = segment_document(&words(250), "d", 100).unwrap();
        let counts: Vec<usize> = ps.iter().map(|p| p.word_count).collect();
        assert_eq!(counts, vec![100, 100, 50]);
        assert_eq!(ps[2].doc_id, "d#2");
    }

    #[test]
    fn segments_exact_window() {
        let ps = segment_document(&words(100), "d", 100).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].offset, 0);
    }

    #[test]
    fn empty_document_has_no_passages() {
        assert!(segment_document("", "d", 100).unwrap().is_empty());
        assert!(segment_document(" \n\t ", "d", 100).unwrap().is_empty());
        assert!(segment_document("x", "d", 0).is_err());
    }

    #[test]
    fn html_cases() {
        assert_eq!(strip_html("<p>Hello <b>world</b></p>"), "Hello world");
        assert_eq!(strip_html("<script>x()</script>Hi"), "Hi");
        assert_eq!(strip_html("A&amp;B"), "A&B");
        assert_eq!(strip_html("<STYLE>p{}</STYLE><!-- c -->a&lt;b&gt; &quot;q&#39;"), "a<b> \"q'");
        assert_eq!(strip_html("x<br/>y"), "x y");
        assert_eq!(strip_html("broken <b"), "broken <b");
    }

    #[test]
    fn corpus_from_150_words() {
        let c = build_corpus("c", &[RawDocument::new("d", words(150))], CorpusScope::Shared, 100).unwrap();
        assert_eq!(c.stats().passage_count, 2);
        assert_eq!(c.stats().doc_count, 1);
        assert_eq!(c.stats().avg_words, 75.0);
        assert!(c.get("d#1").is_some());
    }

    #[test]
    fn empty_corpus() {
        let c = build_corpus("c", &[], CorpusScope::Shared, 100).unwrap();
        assert_eq!(c.stats(), &CorpusStats::default());
    }

    #[test]
    fn duplicate_parent_rejected() {
        let docs = vec![RawDocument::new("d", "a"), RawDocument::new("d", "b")];
        assert!(build_corpus("c", &docs, CorpusScope::Shared, 100).is_err());
    }

    #[test]
    fn corpus_roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let c = build_corpus("c", &[RawDocument::new("d", words(230))], CorpusScope::Shared, 100).unwrap();
        let path = dir.path().join("c.jsonl");
        c.save(&path).unwrap();
        let back = load_corpus(&path, CorpusScope::Shared).unwrap();
        assert_eq!(back.passages(), c.passages());
    }

    #[test]
    fn page_dump_builds_per_question_corpora() {
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("q1");
        std::fs::create_dir(&q).unwrap();
        std::fs::write(q.join("2.txt"), words(10)).unwrap();
        std::fs::write(q.join("1.html"), "<html><body><p>alpha beta</p></body></html>").unwrap();
        std::fs::write(q.join("1.url"), "https://example.org/a\n").unwrap();
        let corpora = load_page_dump(dir.path(), 100).unwrap();
        let c = &corpora["q1"];
        assert_eq!(c.scope, CorpusScope::PerQuestion("q1".into()));
        assert_eq!(c.passages()[0].doc_id, "q1/1#0");
        assert_eq!(c.passages()[0].text, "alpha beta");
        assert_eq!(c.passages()[0].source_url.as_deref(), Some("https://example.org/a"));
        assert_eq!(c.passages()[1].word_count, 10);
    }

    proptest! {
        #[test]
        fn segmentation_is_lossless(doc in "[a-z \n\t]{0,400}", window in 1usize..40) {
            let ps = segment_document(&doc, "d", window).unwrap();
            let rejoined: Vec<&str> = ps.iter().flat_map(|p| p.text.split(' ')).collect();
            let original: Vec<&str> = doc.split_whitespace().collect();
            prop_assert_eq!(rejoined, original);
            for (i, p) in ps.iter().enumerate() {
                prop_assert_eq!(p.offset, i);
                if i + 1 < ps.len() {
                    prop_assert_eq!(p.word_count, window);
                } else {
                    prop_assert!(p.word_count >= 1 && p.word_count <= window);
                }
            }
        }
    }
}
