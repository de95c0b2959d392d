//! Query expansion: ask a chat model for distinct perspectives on a question,
//! retrieve with each, and merge the lists round-robin.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::benchmark::Question;
use crate::error::{Error, Result};
use crate::providers::{ChatMessage, ChatProvider};
use crate::ranked::RankedList;
use crate::retrieval::Retriever;

const EXPANSION_PROMPT: &str = include_str!("../prompts/expansion.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedPerspective {
    pub key: String,
    pub text: String,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRun {
    pub question_id: String,
    pub perspectives: Vec<GeneratedPerspective>,
    pub per_perspective_lists: Vec<RankedList>,
    pub merged: RankedList,
    pub retries: u32,
}

/// Only the question goes into the prompt, never its gold perspectives.
pub fn render_expansion_prompt(question: &Question) -> Vec<ChatMessage> {
    let content = EXPANSION_PROMPT.replace("{question}", &question.text);
    vec![ChatMessage::user(content.trim_end())]
}

/// JSON object entries in document order.
struct OrderedObject(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for OrderedObject {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedObject;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<OrderedObject, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    out.push((k, v));
                }
                Ok(OrderedObject(out))
            }
        }
        d.deserialize_map(V)
    }
}

fn strip_code_fence(s: &str) -> &str {
    let t = s.trim();
    let Some(inner) = t.strip_prefix("```") else { return t };
    let inner = inner.strip_prefix("json").unwrap_or(inner);
    inner.strip_suffix("```").unwrap_or(inner).trim()
}

/// Parses a `{key: perspective}` object, keeping key order as position.
///
/// Duplicate texts are kept; deduplication happens on documents at merge
/// time. Entries whose value is empty are dropped.
pub fn parse_perspectives(response: &str) -> Result<Vec<GeneratedPerspective>> {
    let OrderedObject(entries) = serde_json::from_str(strip_code_fence(response))
        .map_err(|e| Error::Generation(format!("unparseable perspective JSON: {e}")))?;
    let mut out = Vec::with_capacity(entries.len());
    for (key, value) in entries {
        let text = match value {
            Value::String(s) => s,
            Value::Null => continue,
            other @ (Value::Number(_) | Value::Bool(_)) => other.to_string(),
            _ => return Err(Error::Generation(format!("perspective {key:?} is not a string"))),
        };
        if text.trim().is_empty() {
            continue;
        }
        out.push(GeneratedPerspective {
            key,
            text: text.trim().to_string(),
            position: out.len(),
        });
    }
    Ok(out)
}

/// Returns the perspectives and how many retries were needed (0 or 1).
pub fn generate_perspectives(question: &Question, chat: &dyn ChatProvider) -> Result<(Vec<GeneratedPerspective>, u32)> {
    let messages = render_expansion_prompt(question);
    let mut retries = 0;
    loop {
        let reply = chat.chat(&messages)?;
        match parse_perspectives(&reply) {
            Ok(ps) if ps.is_empty() => {
                return Err(Error::Generation(format!("no perspectives generated for {}", question.id)));
            }
            Ok(ps) => return Ok((ps, retries)),
            Err(e) if retries == 0 => {
                log::warn!("question {}: {e}; retrying once", question.id);
                retries += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Interleaves rank 0 of every list (in list order), then rank 1, and so
/// on for `k` rounds, and keeps the first `k` distinct documents. A kept
/// document retains the score of its first occurrence.
pub fn round_robin_merge(lists: &[RankedList], k: usize) -> RankedList {
    let question_id = lists.first().map(|l| l.question_id.clone()).unwrap_or_default();
    let retriever_id = lists
        .first()
        .map(|l| format!("{}+expansion", l.retriever_id))
        .unwrap_or_else(|| "expansion".into());
    let mut merged = RankedList::new(question_id, retriever_id);
    let mut seen = HashSet::new();
    'rounds: for round in 0..k {
        for list in lists {
            if merged.len() == k {
                break 'rounds;
            }
            if let Some(e) = list.entries.get(round) {
                if seen.insert(e.doc_id.as_str()) {
                    merged.entries.push(e.clone());
                }
            }
        }
    }
    merged
}

/// Generate, retrieve per perspective, merge.
///
/// With `concat_question` each query is `question + " " + perspective`;
/// otherwise the perspective text alone.
pub fn expanded_retrieve(
    question: &Question,
    retriever: &dyn Retriever,
    chat: &dyn ChatProvider,
    k: usize,
    concat_question: bool,
) -> Result<ExpansionRun> {
    let (perspectives, retries) =
        generate_perspectives(question, chat).map_err(|e| e.for_question(&question.id))?;
    let per_perspective_lists: Vec<RankedList> = perspectives
        .par_iter()
        .map(|p| {
            let query = if concat_question {
                format!("{} {}", question.text, p.text)
            } else {
                p.text.clone()
            };
            retriever.retrieve(&question.id, &query, k)
        })
        .collect::<Result<_>>()
        .map_err(|e| e.for_question(&question.id))?;
    let mut merged = round_robin_merge(&per_perspective_lists, k);
    merged.question_id = question.id.clone();
    merged.retriever_id = format!("{}+expansion", retriever.id());
    Ok(ExpansionRun {
        question_id: question.id.clone(),
        perspectives,
        per_perspective_lists,
        merged,
        retries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::FnChat;
    use crate::ranked::RankedEntry;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn list(ids: &[&str]) -> RankedList {
        RankedList {
            question_id: "q".into(),
            retriever_id: "r".into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, d)| RankedEntry {
                    doc_id: d.to_string(),
                    score: 10.0 - i as f64,
                })
                .collect(),
        }
    }

    fn question() -> Question {
        serde_json::from_str(
            r#"{"id":"q","text":"Is remote work better?","source":"synthetic","perspectives":[{"id":"p1","text":"GOLD-ONE"},{"id":"p2","text":"GOLD-TWO"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn merge_worked_example() {
        let out = round_robin_merge(&[list(&["a", "b", "c"]), list(&["c", "d", "e"])], 2);
        assert_eq!(out.doc_ids(), vec!["a", "c"]);
    }

    #[test]
    fn merge_exhausts_without_padding() {
        let out = round_robin_merge(&[list(&["a"]), list(&["a"])], 3);
        assert_eq!(out.doc_ids(), vec!["a"]);
    }

    #[test]
    fn merge_three_lists_k5() {
        // interleave: a1 b1 c1 a2 b2 | c2 ...
        let out = round_robin_merge(
            &[
                list(&["a1", "a2", "a3", "a4", "a5"]),
                list(&["b1", "b2", "b3", "b4", "b5"]),
                list(&["c1", "c2", "c3", "c4", "c5"]),
            ],
            5,
        );
        assert_eq!(out.doc_ids(), vec!["a1", "b1", "c1", "a2", "b2"]);
    }

    #[test]
    fn merge_keeps_first_occurrence_score() {
        let mut l2 = list(&["x"]);
        l2.entries[0].score = 99.0;
        let out = round_robin_merge(&[list(&["y", "x"]), l2], 3);
        assert_eq!(out.doc_ids(), vec!["y", "x"]);
        assert_eq!(out.entries[1].score, 99.0);
    }

    #[test]
    fn parses_in_key_order() {
        let ps = parse_perspectives(r#"{"zeta view":"z","alpha view":"a","mid":"m"}"#).unwrap();
        let keys: Vec<&str> = ps.iter().map(|p| p.key.as_str()).collect();
        assert_eq!(keys, vec!["zeta view", "alpha view", "mid"]);
        assert_eq!(ps.iter().map(|p| p.position).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_values_are_kept() {
        let ps = parse_perspectives("```json\n{\"a\":\"same\",\"b\":\"same\"}\n```").unwrap();
        assert_eq!(ps.len(), 2);
    }

    #[test]
    fn retries_once_on_malformed() {
        let calls = AtomicUsize::new(0);
        let chat = FnChat::new("c", |_: &[ChatMessage]| {
            Ok(if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                "not json".to_string()
            } else {
                r#"{"only":"one view"}"#.to_string()
            })
        });
        let (ps, retries) = generate_perspectives(&question(), &chat).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(retries, 1);
    }

    #[test]
    fn fails_after_second_malformed() {
        let chat = FnChat::new("c", |_: &[ChatMessage]| Ok("nope".to_string()));
        assert!(matches!(generate_perspectives(&question(), &chat), Err(Error::Generation(_))));
    }

    #[test]
    fn empty_object_is_an_error() {
        let chat = FnChat::new("c", |_: &[ChatMessage]| Ok("{}".to_string()));
        assert!(generate_perspectives(&question(), &chat).is_err());
    }

    #[test]
    fn prompt_excludes_gold() {
        let msgs = render_expansion_prompt(&question());
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].content.ends_with("Question: Is remote work better?"));
        assert!(!msgs[0].content.contains("GOLD"));
    }
}
