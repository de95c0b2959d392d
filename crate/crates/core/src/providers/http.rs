use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{chat_request_body, request_digest, ChatMessage, ChatProvider, ProviderConfig};
use crate::dense::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};

const BODY_EXCERPT: usize = 200;

struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct GateGuard<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *p == 0 {
            p = self.cv.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
        GateGuard(self)
    }
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut p = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *p += 1;
        self.0.cv.notify_one();
    }
}

struct Inner {
    config: ProviderConfig,
    agent: ureq::Agent,
    gate: Gate,
    retries: AtomicU64,
    requests: AtomicU64,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

/// Shareable JSON-over-HTTP client. Clones share the in-flight limit and
/// counters.
#[derive(Clone)]
pub struct HttpClient {
    inner: Arc<Inner>,
}

impl HttpClient {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        config.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        let gate = Gate::new(config.max_in_flight);
        Ok(Self {
            inner: Arc::new(Inner {
                config,
                agent,
                gate,
                retries: AtomicU64::new(0),
                requests: AtomicU64::new(0),
                in_flight: AtomicUsize::new(0),
                peak_in_flight: AtomicUsize::new(0),
            }),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.inner.config
    }

    /// Total retries issued over the client's lifetime.
    pub fn retries(&self) -> u64 {
        self.inner.retries.load(Ordering::Relaxed)
    }

    pub fn requests(&self) -> u64 {
        self.inner.requests.load(Ordering::Relaxed)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.inner.peak_in_flight.load(Ordering::Relaxed)
    }

    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value> {
        let cfg = &self.inner.config;
        let url = format!("{}/{}", cfg.base_url.trim_end_matches('/'), path.trim_start_matches('/'));
        let payload = body.to_string();
        let digest = request_digest(body);
        let token = cfg
            .auth_env_var
            .as_deref()
            .and_then(|var| std::env::var(var).ok());

        let _permit = self.inner.gate.acquire();
        let now = self.inner.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.inner.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        let result = self.send_with_retries(&url, &payload, &digest, token.as_deref());
        self.inner.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    fn send_with_retries(
        &self,
        url: &str,
        payload: &str,
        digest: &str,
        token: Option<&str>,
    ) -> Result<Value> {
        let cfg = &self.inner.config;
        let mut attempt = 0u32;
        loop {
            self.inner.requests.fetch_add(1, Ordering::Relaxed);
            let started = Instant::now();
            let mut req = self
                .inner
                .agent
                .post(url)
                .set("Content-Type", "application/json");
            if let Some(t) = token {
                req = req.set("Authorization", &format!("Bearer {t}"));
            }
            let failure = match req.send_string(payload) {
                Ok(resp) => {
                    log::debug!(
                        "POST {url} digest={} status={} latency_ms={}",
                        &digest[..12],
                        resp.status(),
                        started.elapsed().as_millis()
                    );
                    let text = resp
                        .into_string()
                        .map_err(|e| Error::Transport(e.to_string()))?;
                    return serde_json::from_str(&text)
                        .map_err(|e| Error::Protocol(format!("invalid JSON response: {e}")));
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let body = excerpt(&resp.into_string().unwrap_or_default());
                    log::debug!(
                        "POST {url} digest={} status={status} latency_ms={}",
                        &digest[..12],
                        started.elapsed().as_millis()
                    );
                    match status {
                        401 | 403 => return Err(Error::Auth { status, body }),
                        400..=499 => return Err(Error::Http { status, body }),
                        _ => format!("HTTP {status}: {body}"),
                    }
                }
                Err(ureq::Error::Transport(t)) => t.to_string(),
            };
            if attempt >= cfg.max_retries {
                return Err(Error::RetriesExhausted {
                    attempts: attempt + 1,
                    last: failure,
                });
            }
            attempt += 1;
            self.inner.retries.fetch_add(1, Ordering::Relaxed);
            let wait = cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            log::warn!("retry {attempt}/{} for {url} after {failure}", cfg.max_retries);
            std::thread::sleep(Duration::from_millis(wait));
        }
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(BODY_EXCERPT).collect()
}

#[derive(Deserialize)]
struct ChatResponse {
    content: String,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// One-shot chat call with a throwaway client.
pub fn chat(messages: &[ChatMessage], config: &ProviderConfig) -> Result<String> {
    HttpChat::new(config.clone())?.chat(messages)
}

/// One-shot embedding call with a throwaway client.
pub fn embed(texts: &[String], config: &ProviderConfig) -> Result<Vec<EmbeddingVector>> {
    HttpEmbedder::new(config.clone(), None)?.embed_batch(texts)
}

pub struct HttpChat {
    id: String,
    client: HttpClient,
}

impl HttpChat {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        Ok(Self::with_client(HttpClient::new(config)?))
    }

    pub fn with_client(client: HttpClient) -> Self {
        let id = format!("http:{}", client.config().model_name);
        Self { id, client }
    }

    pub fn client(&self) -> &HttpClient {
        &self.client
    }
}

impl ChatProvider for HttpChat {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, messages: &[ChatMessage]) -> Result<String> {
        let body = chat_request_body(&self.client.config().model_name, messages);
        let value = self.client.post_json("chat", &body)?;
        let resp: ChatResponse = serde_json::from_value(value)
            .map_err(|e| Error::Protocol(format!("chat response: {e}")))?;
        Ok(resp.content)
    }
}

pub struct HttpEmbedder {
    id: String,
    client: HttpClient,
    dim: Option<usize>,
}

impl HttpEmbedder {
    /// `dim` pins the expected vector length; `None` accepts whatever the
    /// endpoint returns as long as a batch is consistent.
    pub fn new(config: ProviderConfig, dim: Option<usize>) -> Result<Self> {
        let client = HttpClient::new(config)?;
        let id = format!("http:{}", client.config().model_name);
        Ok(Self { id, client, dim })
    }

    pub fn client(&self) -> &HttpClient {
        &self.client
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim.unwrap_or(0)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Precondition("embed batch is empty".into()));
        }
        let value = self.client.post_json("embed", &json!({ "texts": texts }))?;
        let resp: EmbedResponse = serde_json::from_value(value)
            .map_err(|e| Error::Protocol(format!("embed response: {e}")))?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "expected {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        let dim = self.dim.unwrap_or_else(|| resp.vectors[0].len());
        if dim == 0 || resp.vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Protocol("ragged or empty vectors in embed response".into()));
        }
        Ok(resp.vectors.into_iter().map(EmbeddingVector::new).collect())
    }
}
