//! Chat and embedding endpoints.
//!
//! Wire contract (JSON over HTTP):
//!
//! ```text
//! POST {base_url}/chat   {"model": str, "messages": [{"role": str, "content": str}]}
//!                     -> {"content": str}
//! POST {base_url}/embed  {"texts": [str, ...]}
//!                     -> {"vectors": [[f64, ...], ...]}
//! ```
//!
//! Transport failures and 5xx responses are retried with exponential backoff;
//! 4xx responses surface immediately. Concurrent requests through one
//! [`HttpClient`] never exceed `max_in_flight`.

mod http;
pub mod stub;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub use http::{chat, embed, HttpChat, HttpClient, HttpEmbedder};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new("system", content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new("user", content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new("assistant", content)
    }
}

/// Anything that turns a message sequence into one assistant reply.
pub trait ChatProvider: Send + Sync {
    fn id(&self) -> &str;
    fn chat(&self, messages: &[ChatMessage]) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    8
}
fn default_backoff_ms() -> u64 {
    200
}

impl ProviderConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: String::new(),
            auth_env_var: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be >= 1".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(Error::Config("base_url is empty".into()));
        }
        Ok(())
    }
}

/// Request body for the chat endpoint.
pub fn chat_request_body(model: &str, messages: &[ChatMessage]) -> Value {
    json!({ "model": model, "messages": messages })
}

/// Hex SHA-256 of the canonical (sorted-key) JSON serialization.
pub fn request_digest(body: &Value) -> String {
    crate::digest::sha256_hex(body.to_string().as_bytes())
}

/// Offline chat provider: canned replies keyed by request digest.
///
/// The fixture table is shared with [`stub::StubServer`], so the same file
/// drives both in-process and over-the-wire tests.
#[derive(Debug, Default)]
pub struct FixtureChat {
    id: String,
    model: String,
    replies: HashMap<String, String>,
    calls: AtomicU64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureLine {
    pub digest: String,
    pub content: String,
}

impl FixtureChat {
    pub fn new(model: impl Into<String>) -> Self {
        let model = model.into();
        Self {
            id: format!("fixture:{model}"),
            model,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, messages: &[ChatMessage], content: impl Into<String>) {
        let digest = request_digest(&chat_request_body(&self.model, messages));
        self.replies.insert(digest, content.into());
    }

    pub fn load(path: &Path, model: impl Into<String>) -> Result<Self> {
        let mut out = Self::new(model);
        for line in read_fixture_lines(path)? {
            out.replies.insert(line.digest, line.content);
        }
        Ok(out)
    }

    pub fn lines(&self) -> Vec<FixtureLine> {
        let mut lines: Vec<FixtureLine> = self
            .replies
            .iter()
            .map(|(d, c)| FixtureLine {
                digest: d.clone(),
                content: c.clone(),
            })
            .collect();
        lines.sort_by(|a, b| a.digest.cmp(&b.digest));
        lines
    }

    pub fn replies(&self) -> &HashMap<String, String> {
        &self.replies
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

pub fn read_fixture_lines(path: &Path) -> Result<Vec<FixtureLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

impl ChatProvider for FixtureChat {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, messages: &[ChatMessage]) -> Result<String> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let digest = request_digest(&chat_request_body(&self.model, messages));
        self.replies
            .get(&digest)
            .cloned()
            .ok_or_else(|| Error::Protocol(format!("no fixture for request digest {digest}")))
    }
}

/// Wraps a closure as a chat provider; handy for scripted tests.
pub struct FnChat<F> {
    id: String,
    f: F,
}

impl<F> FnChat<F>
where
    F: Fn(&[ChatMessage]) -> Result<String> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> ChatProvider for FnChat<F>
where
    F: Fn(&[ChatMessage]) -> Result<String> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, messages: &[ChatMessage]) -> Result<String> {
        (self.f)(messages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_chat_replies_by_digest() {
        let mut fx = FixtureChat::new("m");
        let msgs = vec![ChatMessage::user("hello")];
        fx.insert(&msgs, "Yes");
        assert_eq!(fx.chat(&msgs).unwrap(), "Yes");
        assert!(fx.chat(&[ChatMessage::user("other")]).is_err());
        assert_eq!(fx.calls(), 2);
    }

    #[test]
    fn digest_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"a":1,"b":[1,2]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"b":[1,2],"a":1}"#).unwrap();
        assert_eq!(request_digest(&a), request_digest(&b));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProviderConfig::new("http://x");
        assert!(cfg.validate().is_ok());
        cfg.timeout_ms = 0;
        assert!(cfg.validate().is_err());
    }
}
